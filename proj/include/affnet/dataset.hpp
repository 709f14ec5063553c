#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "affnet/image.hpp"
#include "affnet/tensor.hpp"

namespace affnet::eval {

inline const std::vector<std::string>& default_label_set() {
  static const std::vector<std::string> labels = {"positive", "negative",
                                                  "surprise", "others"};
  return labels;
}

struct ManifestEntry {
  std::string clip_path;  // frame directory or .ami1 file; may be relative
  std::string video_id;
  std::string subject_id;
  std::string label;
};

// CSV-backed dataset description. Relative clip paths resolve against the
// manifest's own directory.
struct DatasetManifest {
  std::string dataset_name;
  std::filesystem::path base_dir;
  std::vector<std::string> label_set;
  std::vector<ManifestEntry> entries;

  int label_index(const std::string& label) const {
    for (std::size_t i = 0; i < label_set.size(); ++i)
      if (label_set[i] == label) return static_cast<int>(i);
    throw std::invalid_argument("label not in label set: " + label);
  }

  std::filesystem::path resolve(const ManifestEntry& entry) const {
    std::filesystem::path p(entry.clip_path);
    return p.is_absolute() ? p : base_dir / p;
  }
};

inline void validate_manifest(const DatasetManifest& manifest) {
  detail::require(!manifest.entries.empty(), "manifest has no entries");
  std::set<std::string> ids;
  for (const auto& entry : manifest.entries) {
    detail::require(ids.insert(entry.video_id).second,
                    "duplicate video id: " + entry.video_id);
    detail::require(!entry.subject_id.empty(), "entry without subject id");
    manifest.label_index(entry.label);  // throws for unknown labels
  }
}

// Label order: the default four-class order when the labels are a subset of
// it, otherwise lexicographic. Keeps the order identical across manifests
// that share a label vocabulary.
inline std::vector<std::string> derive_label_set(
    const std::vector<ManifestEntry>& entries) {
  std::set<std::string> distinct;
  for (const auto& e : entries) distinct.insert(e.label);
  const auto& defaults = default_label_set();
  bool subset = std::all_of(distinct.begin(), distinct.end(),
                            [&defaults](const std::string& l) {
                              return std::find(defaults.begin(), defaults.end(),
                                               l) != defaults.end();
                            });
  std::vector<std::string> labels;
  if (subset) {
    for (const auto& l : defaults)
      if (distinct.count(l)) labels.push_back(l);
  } else {
    labels.assign(distinct.begin(), distinct.end());
  }
  return labels;
}

inline const char* kManifestHeader = "clip_dir,video_id,subject_id,label";

inline DatasetManifest load_manifest(const std::filesystem::path& csv_path) {
  std::ifstream in(csv_path);
  if (!in)
    throw std::runtime_error("cannot open manifest: " + csv_path.string());
  DatasetManifest manifest;
  manifest.dataset_name = csv_path.stem().string();
  manifest.base_dir = csv_path.parent_path();

  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error("empty manifest: " + csv_path.string());
  if (!line.empty() && line.back() == '\r') line.pop_back();
  detail::require(line == kManifestHeader,
                  "manifest header must be '" + std::string(kManifestHeader) +
                      "' in " + csv_path.string());
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    detail::require(fields.size() == 4,
                    "malformed manifest line: " + line);
    manifest.entries.push_back({fields[0], fields[1], fields[2], fields[3]});
  }
  manifest.label_set = derive_label_set(manifest.entries);
  validate_manifest(manifest);
  return manifest;
}

inline void save_manifest(const std::filesystem::path& csv_path,
                          const DatasetManifest& manifest) {
  std::string text = std::string(kManifestHeader) + "\n";
  for (const auto& e : manifest.entries) {
    for (const std::string* f : {&e.clip_path, &e.video_id, &e.subject_id,
                                 &e.label})
      detail::require(f->find(',') == std::string::npos,
                      "manifest fields must not contain commas");
    text += e.clip_path + "," + e.video_id + "," + e.subject_id + "," +
            e.label + "\n";
  }
  img::write_file_atomic(csv_path, text.data(), text.size());
}

// ---------------------------------------------------------------------------
// Leave-one-subject-out folds: one fold per subject, the held-out subject's
// clips form the test set, everything else trains.
// ---------------------------------------------------------------------------

struct Fold {
  std::string held_out_subject;
  std::vector<int> train_idx;
  std::vector<int> test_idx;
};

struct FoldPlan {
  std::vector<Fold> folds;
};

inline FoldPlan loso_folds(const DatasetManifest& manifest) {
  validate_manifest(manifest);
  std::set<std::string> subjects;
  for (const auto& e : manifest.entries) subjects.insert(e.subject_id);
  detail::require(subjects.size() >= 2,
                  "leave-one-subject-out needs at least 2 subjects");
  FoldPlan plan;
  for (const auto& subject : subjects) {  // std::set iterates in sorted order
    Fold fold;
    fold.held_out_subject = subject;
    for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
      if (manifest.entries[i].subject_id == subject)
        fold.test_idx.push_back(static_cast<int>(i));
      else
        fold.train_idx.push_back(static_cast<int>(i));
    }
    plan.folds.push_back(std::move(fold));
  }
  return plan;
}

}  // namespace affnet::eval
