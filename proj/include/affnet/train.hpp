#pragma once

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <mutex>
#include <numeric>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "json.hpp"

#include "affnet/ami.hpp"
#include "affnet/augment.hpp"
#include "affnet/dataset.hpp"
#include "affnet/network.hpp"
#include "affnet/rng.hpp"

namespace affnet::eval {

struct TrainConfig {
  int epochs = 50;
  int batch_size = 16;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  AugmentMode augment = AugmentMode::kFull;
  ami::WeightRule weight_rule = ami::WeightRule::kSuffixSum;
  int max_threads = 0;  // 0: AFFNET_THREADS env var, else hardware count
  bool cache_ami = true;
};

inline void to_json(nlohmann::json& j, const TrainConfig& config) {
  j = nlohmann::json{{"epochs", config.epochs},
                     {"batch_size", config.batch_size},
                     {"learning_rate", config.learning_rate},
                     {"seed", config.seed},
                     {"augment", to_string(config.augment)},
                     {"weight_rule", ami::to_string(config.weight_rule)},
                     {"cache_ami", config.cache_ami}};
}

inline int thread_budget(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("AFFNET_THREADS")) {
    int n = std::atoi(env);
    if (n > 0) return n;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// ---------------------------------------------------------------------------
// Clip resolution: an entry points at an AMI1 file or a frame directory.
// Directory composites are cached next to the clip, keyed by frame count
// and weight rule.
// ---------------------------------------------------------------------------

inline Tensor<float> load_clip_image(const DatasetManifest& manifest,
                                     const ManifestEntry& entry,
                                     ami::WeightRule rule, bool use_cache) {
  const std::filesystem::path path = manifest.resolve(entry);
  if (std::filesystem::is_regular_file(path) && path.extension() == ".ami1")
    return img::read_ami1(path);
  if (!std::filesystem::is_directory(path))
    throw std::runtime_error("cannot read clip '" + entry.video_id + "' at " +
                             path.string());

  // Frame count is known from the directory listing alone, which makes the
  // cache key cheap to compute.
  int frame_count = 0;
  for (const auto& f : std::filesystem::directory_iterator(path)) {
    if (!f.is_regular_file()) continue;
    std::string ext = f.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") ++frame_count;
  }
  std::filesystem::path cache = path;
  cache += ".k" + std::to_string(frame_count) + "." + ami::to_string(rule) +
           ".ami1";
  if (use_cache && std::filesystem::is_regular_file(cache))
    return img::read_ami1(cache);

  ami::FrameSequence seq = ami::load_frame_sequence(
      path, entry.video_id, entry.subject_id, entry.label);
  ami::AffectiveImage image = ami::compose(seq, rule);
  Tensor<float> pixels = image.pixels.template cast<float>();
  if (use_cache) img::write_ami1(cache, pixels);
  return pixels;
}

struct Sample {
  Tensor<float> image;
  int label = 0;
};

// Loads, composites and augments every requested entry, in manifest order
// with augmented variants appended right after their original.
inline std::vector<Sample> build_pool(const DatasetManifest& manifest,
                                      const std::vector<int>& indices,
                                      const TrainConfig& config,
                                      bool augmented) {
  std::vector<int> order = indices;
  if (order.empty()) {
    order.resize(manifest.entries.size());
    std::iota(order.begin(), order.end(), 0);
  }
  std::vector<Sample> pool;
  for (int idx : order) {
    const ManifestEntry& entry = manifest.entries[static_cast<std::size_t>(idx)];
    const int label = manifest.label_index(entry.label);
    Tensor<float> image =
        load_clip_image(manifest, entry, config.weight_rule, config.cache_ami);
    if (augmented && config.augment != AugmentMode::kNone) {
      ami::AffectiveImage base{image.cast<double>(), entry.video_id, 0};
      for (auto& variant : augment(base, config.seed, config.augment))
        pool.push_back({variant.pixels.cast<float>(), label});
    } else {
      pool.push_back({std::move(image), label});
    }
  }
  return pool;
}

// ---------------------------------------------------------------------------
// Training loop: plain SGD on softmax cross-entropy, seeded shuffles, one
// mean loss value per epoch. Trailing batches smaller than two samples are
// dropped because train-mode batch norm needs a defined variance.
// ---------------------------------------------------------------------------

struct TrainResult {
  Network<float> net;
  std::vector<double> epoch_loss;
};

inline Tensor<float> stack_batch(const std::vector<Sample>& pool,
                                 const std::vector<int>& order,
                                 std::size_t begin, std::size_t count) {
  const auto& first = pool[static_cast<std::size_t>(order[begin])].image;
  detail::require(first.rank() == 3, "samples must be H x W x C images");
  Tensor<float> batch({count, first.dim(0), first.dim(1), first.dim(2)});
  for (std::size_t i = 0; i < count; ++i) {
    const auto& image = pool[static_cast<std::size_t>(order[begin + i])].image;
    detail::require(image.same_shape(first), "sample shapes differ in batch");
    std::copy(image.data(), image.data() + image.size(),
              batch.data() + i * image.size());
  }
  return batch;
}

inline TrainResult train_network(const DatasetManifest& manifest,
                                 const std::vector<int>& indices,
                                 NetworkSpec spec, const TrainConfig& config) {
  detail::require(config.batch_size >= 2,
                  "batch size must be >= 2 for train-mode batch norm");
  detail::require(config.epochs >= 0, "epoch count must be >= 0");
  spec.seed = config.seed;
  spec.class_count = static_cast<int>(manifest.label_set.size());

  TrainResult result{build_network<float>(spec), {}};
  if (config.epochs == 0) return result;

  std::vector<Sample> pool = build_pool(manifest, indices, config, true);
  detail::require(pool.size() >= 2, "training needs at least 2 samples");

  std::vector<int> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t batch_size = static_cast<std::size_t>(config.batch_size);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Rng shuffle_rng(mix_seed(config.seed, 0x0e90c000ull + epoch));
    shuffle_rng.shuffle(order.begin(), order.end());
    double loss_sum = 0.0;
    int batches = 0;
    for (std::size_t at = 0; at < order.size(); at += batch_size) {
      const std::size_t count = std::min(batch_size, order.size() - at);
      if (count < 2) break;  // drop a trailing singleton
      Tensor<float> batch = stack_batch(pool, order, at, count);
      std::vector<int> labels(count);
      for (std::size_t i = 0; i < count; ++i)
        labels[i] = pool[static_cast<std::size_t>(order[at + i])].label;

      ForwardCache<float> cache;
      Tensor<float> logits =
          forward_logits(result.net, batch, nn::Mode::kTrain, &cache);
      nn::SoftmaxLoss<float> loss = nn::softmax_cross_entropy(logits, labels);
      Network<float> grads = backward(result.net, cache, loss.grad_logits);
      apply_sgd(result.net, grads,
                static_cast<float>(config.learning_rate));
      loss_sum += static_cast<double>(loss.loss);
      ++batches;
    }
    detail::require(batches > 0, "no trainable batches; add samples");
    result.epoch_loss.push_back(loss_sum / batches);
  }
  return result;
}

// Batched argmax predictions in inference mode.
inline std::vector<int> predict(const Network<float>& net,
                                const std::vector<Sample>& samples) {
  std::vector<int> predictions;
  const std::size_t chunk = 32;
  std::vector<int> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t at = 0; at < samples.size(); at += chunk) {
    const std::size_t count = std::min(chunk, samples.size() - at);
    Tensor<float> batch = stack_batch(samples, order, at, count);
    Tensor<float> probs = forward(net, batch);
    const std::size_t classes = probs.dim(1);
    for (std::size_t i = 0; i < count; ++i) {
      const float* row = probs.data() + i * classes;
      int best = 0;
      for (std::size_t c = 1; c < classes; ++c)
        if (row[c] > row[best]) best = static_cast<int>(c);
      predictions.push_back(best);
    }
  }
  return predictions;
}

// ---------------------------------------------------------------------------
// Metrics and reports.
// ---------------------------------------------------------------------------

inline double round2(double value) { return std::round(value * 100.0) / 100.0; }

struct EvalReport {
  std::string name;
  std::vector<std::string> label_set;
  std::vector<double> per_fold_accuracy;  // percent, two decimals
  double aggregate_accuracy = 0.0;        // percent, two decimals
  std::vector<std::vector<long long>> confusion;  // [true][predicted]
  nlohmann::json config_snapshot;
};

// Accuracy is 100 * correct / total; the confusion matrix rows are the true
// classes, columns the predictions.
inline EvalReport accuracy_and_confusion(
    const std::vector<int>& predicted, const std::vector<int>& actual,
    const std::vector<std::string>& label_set) {
  detail::require(!predicted.empty(), "no predictions to score");
  detail::require(predicted.size() == actual.size(),
                  "prediction and label counts differ");
  const int classes = static_cast<int>(label_set.size());
  EvalReport report;
  report.label_set = label_set;
  report.confusion.assign(static_cast<std::size_t>(classes),
                          std::vector<long long>(classes, 0));
  long long correct = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    detail::require(actual[i] >= 0 && actual[i] < classes &&
                        predicted[i] >= 0 && predicted[i] < classes,
                    "class index out of range");
    report.confusion[static_cast<std::size_t>(actual[i])]
                    [static_cast<std::size_t>(predicted[i])]++;
    if (predicted[i] == actual[i]) ++correct;
  }
  report.aggregate_accuracy =
      round2(100.0 * static_cast<double>(correct) / predicted.size());
  return report;
}

inline void to_json(nlohmann::json& j, const EvalReport& report) {
  j = nlohmann::json{{"name", report.name},
                     {"label_set", report.label_set},
                     {"per_fold_accuracy", report.per_fold_accuracy},
                     {"aggregate_accuracy", report.aggregate_accuracy},
                     {"confusion", report.confusion},
                     {"config", report.config_snapshot}};
}

inline std::string confusion_csv(const EvalReport& report) {
  std::string text = "true\\predicted";
  for (const auto& label : report.label_set) text += "," + label;
  text += "\n";
  for (std::size_t r = 0; r < report.confusion.size(); ++r) {
    text += report.label_set[r];
    for (long long v : report.confusion[r]) text += "," + std::to_string(v);
    text += "\n";
  }
  return text;
}

// ---------------------------------------------------------------------------
// Protocols.
// ---------------------------------------------------------------------------

struct LosoResult {
  EvalReport report;
  std::vector<std::vector<double>> fold_losses;  // one curve per fold
};

// One fold per subject. Folds are independent and run on up to
// thread_budget() workers, each with a fold-derived seed; results merge in
// fold order so the report does not depend on scheduling.
inline LosoResult loso_eval(const DatasetManifest& manifest, NetworkSpec spec,
                            const TrainConfig& config) {
  FoldPlan plan = loso_folds(manifest);
  const std::size_t fold_count = plan.folds.size();

  struct FoldOutput {
    std::vector<int> predicted, actual;
    std::vector<double> losses;
  };
  std::vector<FoldOutput> outputs(fold_count);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;

  auto run_fold = [&](std::size_t f) {
    const Fold& fold = plan.folds[f];
    TrainConfig fold_config = config;
    fold_config.seed = mix_seed(config.seed, 0xf01d0000ull + f);
    TrainResult trained =
        train_network(manifest, fold.train_idx, spec, fold_config);
    std::vector<Sample> test_pool =
        build_pool(manifest, fold.test_idx, fold_config, false);
    outputs[f].predicted = predict(trained.net, test_pool);
    for (const auto& sample : test_pool) outputs[f].actual.push_back(sample.label);
    outputs[f].losses = std::move(trained.epoch_loss);
  };

  const int workers =
      std::min<int>(thread_budget(config.max_threads),
                    static_cast<int>(fold_count));
  if (workers <= 1) {
    for (std::size_t f = 0; f < fold_count; ++f) run_fold(f);
  } else {
    std::vector<std::thread> threads;
    for (int t = 0; t < workers; ++t) {
      threads.emplace_back([&]() {
        for (;;) {
          std::size_t f = next.fetch_add(1);
          if (f >= fold_count) return;
          try {
            run_fold(f);
          } catch (...) {
            std::lock_guard<std::mutex> lock(failure_mutex);
            if (!failure) failure = std::current_exception();
            return;
          }
        }
      });
    }
    for (auto& thread : threads) thread.join();
    if (failure) std::rethrow_exception(failure);
  }

  std::vector<int> all_predicted, all_actual;
  LosoResult result;
  for (std::size_t f = 0; f < fold_count; ++f) {
    EvalReport fold_report = accuracy_and_confusion(
        outputs[f].predicted, outputs[f].actual, manifest.label_set);
    result.report.per_fold_accuracy.push_back(fold_report.aggregate_accuracy);
    all_predicted.insert(all_predicted.end(), outputs[f].predicted.begin(),
                         outputs[f].predicted.end());
    all_actual.insert(all_actual.end(), outputs[f].actual.begin(),
                      outputs[f].actual.end());
    result.fold_losses.push_back(std::move(outputs[f].losses));
  }
  EvalReport merged =
      accuracy_and_confusion(all_predicted, all_actual, manifest.label_set);
  result.report.name = manifest.dataset_name + "-loso";
  result.report.label_set = manifest.label_set;
  result.report.aggregate_accuracy = merged.aggregate_accuracy;
  result.report.confusion = std::move(merged.confusion);
  nlohmann::json snapshot;
  snapshot["protocol"] = "loso";
  snapshot["manifest"] = manifest.dataset_name;
  snapshot["network"] = spec;
  snapshot["training"] = config;
  result.report.config_snapshot = snapshot;
  return result;
}

struct CrossDatasetResult {
  EvalReport report;
  Network<float> net;
  std::vector<double> losses;
};

// Train on one dataset, evaluate once on the other. The report is named
// <TRAIN>2<TEST> after the two manifests.
inline CrossDatasetResult cross_dataset_eval(const DatasetManifest& train_set,
                                             const DatasetManifest& test_set,
                                             NetworkSpec spec,
                                             const TrainConfig& config) {
  detail::require(train_set.label_set == test_set.label_set,
                  "cross-dataset evaluation needs identical label sets");
  TrainResult trained = train_network(train_set, {}, spec, config);
  std::vector<Sample> test_pool = build_pool(test_set, {}, config, false);
  std::vector<int> predicted = predict(trained.net, test_pool);
  std::vector<int> actual;
  for (const auto& sample : test_pool) actual.push_back(sample.label);

  CrossDatasetResult result{accuracy_and_confusion(predicted, actual,
                                                   test_set.label_set),
                            std::move(trained.net),
                            std::move(trained.epoch_loss)};
  result.report.name = train_set.dataset_name + "2" + test_set.dataset_name;
  result.report.per_fold_accuracy = {result.report.aggregate_accuracy};
  nlohmann::json snapshot;
  snapshot["protocol"] = "cross_dataset";
  snapshot["train_manifest"] = train_set.dataset_name;
  snapshot["test_manifest"] = test_set.dataset_name;
  snapshot["network"] = spec;
  snapshot["training"] = config;
  result.report.config_snapshot = snapshot;
  return result;
}

// Train-set accuracy of a trained network; used for convergence checks.
inline double training_accuracy(const Network<float>& net,
                                const DatasetManifest& manifest,
                                const std::vector<int>& indices,
                                const TrainConfig& config) {
  std::vector<Sample> pool = build_pool(manifest, indices, config, false);
  std::vector<int> predicted = predict(net, pool);
  long long correct = 0;
  for (std::size_t i = 0; i < pool.size(); ++i)
    if (predicted[i] == pool[i].label) ++correct;
  return 100.0 * static_cast<double>(correct) / static_cast<double>(pool.size());
}

inline std::string loss_curve_csv(
    const std::vector<std::vector<double>>& fold_losses) {
  std::string text = "fold,epoch,mean_loss\n";
  for (std::size_t f = 0; f < fold_losses.size(); ++f)
    for (std::size_t e = 0; e < fold_losses[f].size(); ++e) {
      char line[96];
      std::snprintf(line, sizeof(line), "%zu,%zu,%.9g\n", f, e,
                    fold_losses[f][e]);
      text += line;
    }
  return text;
}

inline void write_report(const std::filesystem::path& out_dir,
                         const EvalReport& report) {
  std::filesystem::create_directories(out_dir);
  nlohmann::json j = report;
  const std::string text = j.dump(2) + "\n";
  img::write_file_atomic(out_dir / "report.json", text.data(), text.size());
  const std::string csv = confusion_csv(report);
  img::write_file_atomic(out_dir / "confusion.csv", csv.data(), csv.size());
}

}  // namespace affnet::eval
