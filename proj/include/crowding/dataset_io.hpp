#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "crowding/dataset.hpp"

namespace crowding {

struct DatasetFiles {
  std::filesystem::path features;
  std::optional<std::filesystem::path> annotators;
  std::filesystem::path annotations;
  std::optional<std::filesystem::path> truth;
  std::optional<std::filesystem::path> splits;
};

// Standard file names inside a dataset directory.
DatasetFiles dataset_files_in(const std::filesystem::path& dir);

// num_classes == 0 infers |C| from the largest label seen; the number of
// one-hot annotators is inferred from the largest annotator id unless given.
CrowdDataset load_dataset(const DatasetFiles& files, std::size_t num_classes = 0,
                          std::size_t num_annotators = 0);

// Loads a directory written by save_dataset (reads dataset.cfg for |C|, R).
CrowdDataset load_dataset_dir(const std::filesystem::path& dir);

// Canonical writer: annotations sorted by (instance, annotator), doubles in
// shortest round-trip form, LF endings.
void save_dataset(const CrowdDataset& ds, const std::filesystem::path& dir);

std::string format_annotations_csv(const CrowdDataset& ds);
std::string format_matrix_csv(const Tensor& m);

// Low-level readers, exposed for tests.
Tensor read_matrix_csv(const std::filesystem::path& path);
std::vector<Annotation> read_annotations_csv(const std::filesystem::path& path);

}  // namespace crowding
