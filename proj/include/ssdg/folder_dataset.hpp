#pragma once

#include "dataset.hpp"
#include "errors.hpp"
#include "image_io.hpp"

#include <algorithm>
#include <filesystem>
#include <string>
#include <vector>

namespace ssdg {

namespace folder_detail {

inline std::vector<std::filesystem::path> sorted_subdirs(const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> out;
    for (const auto& entry : std::filesystem::directory_iterator(dir))
        if (entry.is_directory()) out.push_back(entry.path());
    std::sort(out.begin(), out.end());
    return out;
}

} // namespace folder_detail

// Reads root/<domain>/<class>/<image>. Domains and classes are ordered
// lexicographically and labels follow class-name rank. Every image is resized
// to image_size x image_size RGB.
inline MultiDomainDataset load_folder_dataset(const std::filesystem::path& root, int image_size = 32) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(root)) throw IngestionError("dataset root is not a directory: " + root.string());
    const auto domain_dirs = folder_detail::sorted_subdirs(root);
    if (domain_dirs.empty()) throw IngestionError("dataset root has no domain directories: " + root.string());

    MultiDomainDataset ds;
    std::vector<std::string> reference_classes;
    for (std::size_t d = 0; d < domain_dirs.size(); ++d) {
        const auto class_dirs = folder_detail::sorted_subdirs(domain_dirs[d]);
        std::vector<std::string> names;
        for (const auto& c : class_dirs) names.push_back(c.filename().string());
        const std::string domain_name = domain_dirs[d].filename().string();
        if (names.empty()) throw IngestionError("domain " + domain_name + " has no class directories");
        if (d == 0) {
            reference_classes = names;
        } else if (names != reference_classes) {
            throw IngestionError("domain " + domain_name + " has a class set that differs from domain " +
                                 ds.domains.front());
        }
        ds.domains.push_back(domain_name);
        auto& list = ds.examples.emplace_back();
        for (std::size_t c = 0; c < class_dirs.size(); ++c) {
            std::vector<fs::path> files;
            for (const auto& entry : fs::directory_iterator(class_dirs[c]))
                if (entry.is_regular_file() && is_supported_image_file(entry.path())) files.push_back(entry.path());
            std::sort(files.begin(), files.end());
            if (files.empty())
                throw IngestionError("domain " + domain_name + " class " + names[c] + " has no images");
            for (const auto& f : files) {
                Image img;
                try {
                    img = read_image(f);
                } catch (const IngestionError& e) {
                    throw IngestionError("unreadable image " + f.string() + " (" + e.what() + ")");
                }
                list.push_back({std::make_shared<const Image>(resize_bilinear(img, image_size, image_size)),
                                static_cast<int>(c)});
            }
        }
    }
    ds.class_names = reference_classes;
    ds.num_classes = static_cast<int>(reference_classes.size());
    ds.validate();
    return ds;
}

// Writes a dataset in the layout load_folder_dataset reads.
inline void save_folder_dataset(const MultiDomainDataset& ds, const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    fs::create_directories(root);
    for (int d = 0; d < ds.num_domains(); ++d) {
        std::vector<int> per_class(static_cast<std::size_t>(ds.num_classes), 0);
        for (const auto& e : ds.examples[static_cast<std::size_t>(d)]) {
            const auto dir = root / ds.domains[static_cast<std::size_t>(d)] /
                             ds.class_names.at(static_cast<std::size_t>(e.label));
            fs::create_directories(dir);
            char name[32];
            std::snprintf(name, sizeof name, "%05d.png", per_class[static_cast<std::size_t>(e.label)]++);
            write_png(dir / name, *e.image);
        }
    }
}

} // namespace ssdg
