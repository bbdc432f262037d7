#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mapdp/checkpoint.hpp"
#include "mapdp/common.hpp"
#include "mapdp/config.hpp"
#include "mapdp/data.hpp"
#include "mapdp/model.hpp"
#include "mapdp/optimizer.hpp"
#include "mapdp/pruning.hpp"
#include "mapdp/tensor.hpp"

namespace mapdp {

struct RunRecord {
  double last_acc = 0.0;
  double best_acc = 0.0;
  int best_epoch = -1;
  double final_sparsity = 0.0;
  double wall_time_s = 0.0;
  long total_iterations = 0;
  long exploit_iteration = 0;
  size_t n_prunable = 0;
  std::string metrics_csv;  // full CSV text, also written to disk
};

namespace detail {

template <typename T>
std::pair<Dataset<T>, Dataset<T>> load_data(const RunConfig& c) {
  Dataset<T> train, test;
  if (c.dataset == "idx") {
    train = load_idx_dataset<T>(c.idx_train_images, c.idx_train_labels);
    test = load_idx_dataset<T>(c.idx_test_images, c.idx_test_labels);
    test.classes = train.classes = std::max(train.classes, test.classes);
  } else {
    // One blob layout shared by both splits: draw train+test samples per
    // class from a single stream so the class means agree.
    Dataset<T> all =
        gen_synthetic<T>(c.synthetic_classes,
                         c.synthetic_per_class + c.synthetic_test_per_class,
                         c.synthetic_dim, c.data_seed, c.synthetic_sigma);
    const size_t block = c.synthetic_per_class + c.synthetic_test_per_class;
    train.dim = test.dim = all.dim;
    train.classes = test.classes = all.classes;
    for (size_t cls = 0; cls < c.synthetic_classes; ++cls) {
      const size_t base = cls * block;
      for (size_t s = 0; s < block; ++s) {
        auto& dst = s < c.synthetic_per_class ? train : test;
        const size_t row = base + s;
        dst.images.insert(dst.images.end(),
                          all.images.begin() + row * all.dim,
                          all.images.begin() + (row + 1) * all.dim);
        dst.labels.push_back(all.labels[row]);
      }
    }
  }
  truncate(train, c.train_limit);
  standardize(train, test);
  return {std::move(train), std::move(test)};
}

template <typename T>
double evaluate(const ParamRegistry<T>& reg, const PruneEngine<T>* engine,
                Variant variant, const Dataset<T>& ds, size_t batch_size,
                double* out_loss = nullptr) {
  size_t correct = 0;
  double loss_sum = 0.0;
  std::map<std::string, TensorPtr<T>> eff;
  if (engine) {
    eff = engine->effective_weights(reg, variant, /*with_grad=*/false);
  } else {
    for (const auto& p : reg.params())
      if (p.prunable) eff.emplace(p.name, p.value);
  }
  for (size_t start = 0; start < ds.size(); start += batch_size) {
    Batch b;
    for (size_t i = start; i < std::min(ds.size(), start + batch_size); ++i)
      b.indices.push_back(i);
    auto [x, y] = gather_batch(ds, b);
    Tape<T> tape;
    auto logits = reg.forward(tape, eff, x);
    auto loss = softmax_cross_entropy(tape, logits, y);
    loss_sum += static_cast<double>(loss->data[0]) * b.indices.size();
    const size_t classes = logits->dim(1);
    for (size_t r = 0; r < b.indices.size(); ++r) {
      const T* row = logits->data.data() + r * classes;
      size_t arg = 0;
      for (size_t j = 1; j < classes; ++j)
        if (row[j] > row[arg]) arg = j;
      if (static_cast<int>(arg) == y[r]) ++correct;
    }
  }
  if (out_loss) *out_loss = loss_sum / static_cast<double>(ds.size());
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

inline std::string csv_header() {
  return "epoch,iteration,split,loss,accuracy,P_c,actual_sparsity,"
         "mask_change_ratio,lr\n";
}

}  // namespace detail

/// Runs one full training per the configured update rule and writes
/// metrics.csv, summary.json, and checkpoint.bin into out_dir.
template <typename T>
RunRecord train_impl(const RunConfig& c, const std::string& out_dir) {
  const auto t0 = std::chrono::steady_clock::now();
  std::filesystem::create_directories(out_dir);

  auto [train_ds, test_ds] = detail::load_data<T>(c);
  if (train_ds.size() == 0) throw ConfigError("empty training split");

  auto reg = ParamRegistry<T>::build_mlp(mlp_specs(c.arch), c.seed);
  const bool dense = c.variant == Variant::Dense;
  for (auto& p : reg.params()) {
    if (!p.prunable || dense) {
      p.value->requires_grad = true;
      p.value->grad.assign(p.value->size(), T(0));
    }
  }

  const size_t n_train = train_ds.size();
  const long iters_per_epoch =
      static_cast<long>((n_train + c.batch_size - 1) / c.batch_size);
  const long total_iters = iters_per_epoch * c.epochs;
  const long exploit_iter =
      static_cast<long>(c.resolved_exploit_epoch()) * iters_per_epoch;

  std::unique_ptr<PruneEngine<T>> engine;
  if (!dense) {
    typename PruneEngine<T>::Settings s;
    s.strength = c.strength;
    s.update_every = c.update_every;
    s.exploit_start = exploit_iter;
    s.scope = c.norm_scope;
    s.kind = c.norm_kind;
    engine = std::make_unique<PruneEngine<T>>(reg, s);
  }

  Sgd<T> sgd(reg, c.sgd_config());
  const GradualSchedule sched = c.schedule();

  long iter = 0;
  int start_epoch = 0;
  double best_acc = 0.0, last_acc = 0.0;
  int best_epoch = -1;

  if (!c.resume_from.empty()) {
    auto ck = Checkpoint<T>::load(c.resume_from);
    if (ck.arch.size() != reg.layers().size())
      throw ConfigError("checkpoint architecture does not match config");
    for (size_t l = 0; l < ck.arch.size(); ++l)
      if (ck.arch[l].in_dim != reg.layers()[l].in_dim ||
          ck.arch[l].out_dim != reg.layers()[l].out_dim)
        throw ConfigError("checkpoint architecture does not match config");
    for (size_t p = 0; p < reg.params().size(); ++p) {
      if (ck.param_names[p] != reg.params()[p].name)
        throw ConfigError("checkpoint parameter order mismatch");
      reg.params()[p].value->data = ck.param_data[p];
      sgd.velocity()[p] = ck.velocity[p];
    }
    if (engine) {
      engine->mask() = ck.masks;
      engine->attention() = ck.attentions;
      engine->set_ratio(ck.ratio);
      engine->set_threshold(ck.threshold);
      engine->set_frozen(ck.frozen);
    }
    iter = ck.iteration;
    start_epoch = static_cast<int>(ck.epoch);
    best_acc = ck.best_acc;
    best_epoch = static_cast<int>(ck.best_epoch);
    last_acc = ck.last_acc;
  }

  std::string csv = detail::csv_header();
  auto csv_row = [&](int epoch, long it, const std::string& split, double loss,
                     double acc, double pc, double sparsity, double chg,
                     double lr, bool has_la, bool has_chg) {
    csv += std::to_string(epoch) + "," + std::to_string(it) + "," + split + ",";
    csv += (has_la ? fmt_num(loss) : std::string()) + ",";
    csv += (has_la ? fmt_num(acc) : std::string()) + ",";
    csv += fmt_num(pc) + "," + fmt_num(sparsity) + ",";
    csv += (has_chg ? fmt_num(chg) : std::string()) + ",";
    csv += fmt_num(lr) + "\n";
  };

  auto save_checkpoint = [&](const std::string& path, int epochs_done) {
    Checkpoint<T> ck;
    ck.arch = reg.layers();
    ck.run_seed = c.seed;
    ck.epoch = epochs_done;
    ck.iteration = iter;
    ck.best_acc = best_acc;
    ck.best_epoch = best_epoch;
    ck.last_acc = last_acc;
    for (const auto& p : reg.params()) {
      ck.param_names.push_back(p.name);
      ck.param_shapes.push_back(p.value->shape);
      ck.param_prunable.push_back(p.prunable ? 1 : 0);
      ck.param_data.push_back(p.value->data);
    }
    if (engine) {
      ck.prune_enabled = true;
      ck.variant = c.variant;
      ck.threshold = engine->threshold();
      ck.ratio = engine->current_ratio();
      ck.strength = c.strength;
      ck.update_every = c.update_every;
      ck.exploit_start = exploit_iter;
      ck.frozen = engine->frozen();
      ck.scope = c.norm_scope;
      ck.kind = c.norm_kind;
      ck.masks = engine->mask();
      ck.attentions = engine->attention();
    }
    ck.sgd = sgd.config();
    ck.velocity = sgd.velocity();
    ck.rng_state = Rng(c.seed).serialize();
    ck.save(path);
  };

  bool stopped_early = false;
  for (int epoch = start_epoch; epoch < c.epochs; ++epoch) {
    const double pc = sched.ratio_at(epoch);
    if (engine) engine->set_ratio(pc);
    sgd.set_epoch(epoch);
    const double lr = sgd.current_lr();

    double train_loss_sum = 0.0;
    size_t train_correct = 0;
    const auto batches = make_batches(n_train, c.batch_size, c.seed,
                                      static_cast<uint64_t>(epoch));
    for (const auto& batch : batches) {
      ++iter;
      if (engine) {
        const double chg = engine->on_iteration(iter, reg);
        if (chg >= 0.0)
          csv_row(epoch, iter, "mask_update", 0, 0, pc,
                  engine->actual_sparsity(), chg, lr, false, true);
      }

      std::map<std::string, TensorPtr<T>> eff;
      if (engine) {
        eff = engine->effective_weights(reg, c.variant, /*with_grad=*/true);
      } else {
        for (const auto& p : reg.params())
          if (p.prunable) eff.emplace(p.name, p.value);
      }
      for (auto& p : reg.params())
        if (p.value->requires_grad) p.value->zero_grad();

      auto [x, y] = gather_batch(train_ds, batch);
      Tape<T> tape;
      auto logits = reg.forward(tape, eff, x);
      auto loss = softmax_cross_entropy(tape, logits, y);
      if (!std::isfinite(static_cast<double>(loss->data[0])))
        throw Error("non-finite loss at iteration " + std::to_string(iter) +
                    " (epoch " + std::to_string(epoch) + ")");
      tape.backward(loss);

      std::vector<const std::vector<T>*> grads;
      for (const auto& p : reg.params()) {
        if (p.prunable && engine)
          grads.push_back(&eff.at(p.name)->grad);
        else
          grads.push_back(&p.value->grad);
      }
      std::vector<std::vector<T>> scale;
      std::vector<const std::vector<T>*> scale_ptrs;
      std::vector<const std::vector<uint8_t>*> mask_ptrs;
      if (engine) {
        scale = engine->backward_scale(c.variant);
        for (const auto& s : scale) scale_ptrs.push_back(&s);
        for (const auto& m : engine->mask()) mask_ptrs.push_back(&m);
      }
      sgd.step(reg, grads, scale_ptrs, mask_ptrs);

      train_loss_sum += static_cast<double>(loss->data[0]) * batch.indices.size();
      const size_t classes = logits->dim(1);
      for (size_t r = 0; r < batch.indices.size(); ++r) {
        const T* row = logits->data.data() + r * classes;
        size_t arg = 0;
        for (size_t j = 1; j < classes; ++j)
          if (row[j] > row[arg]) arg = j;
        if (static_cast<int>(arg) == y[r]) ++train_correct;
      }
    }

    const double sparsity = engine ? engine->actual_sparsity() : 0.0;
    csv_row(epoch, iter, "train", train_loss_sum / n_train,
            static_cast<double>(train_correct) / n_train, pc, sparsity, 0, lr,
            true, false);
    double test_loss = 0.0;
    const double test_acc = detail::evaluate(reg, engine.get(), c.variant,
                                             test_ds, c.batch_size, &test_loss);
    csv_row(epoch, iter, "test", test_loss, test_acc, pc, sparsity, 0, lr,
            true, false);
    last_acc = test_acc;
    if (test_acc > best_acc || best_epoch < 0) {
      best_acc = test_acc;
      best_epoch = epoch;
    }

    const int epochs_done = epoch + 1;
    if (c.checkpoint_every > 0 && epochs_done % c.checkpoint_every == 0 &&
        epochs_done < c.epochs)
      save_checkpoint(out_dir + "/checkpoint_" + std::to_string(epochs_done) +
                          ".bin",
                      epochs_done);
    if (c.stop_after_epoch > 0 && epochs_done == c.stop_after_epoch &&
        epochs_done < c.epochs) {
      save_checkpoint(out_dir + "/checkpoint.bin", epochs_done);
      stopped_early = true;
      break;
    }
  }

  if (!stopped_early) save_checkpoint(out_dir + "/checkpoint.bin", c.epochs);

  RunRecord rec;
  rec.last_acc = last_acc;
  rec.best_acc = best_acc;
  rec.best_epoch = best_epoch;
  rec.final_sparsity = engine ? engine->actual_sparsity() : 0.0;
  rec.total_iterations = total_iters;
  rec.exploit_iteration = exploit_iter;
  rec.n_prunable = engine ? engine->n_prunable() : 0;
  rec.wall_time_s = std::chrono::duration<double>(
                        std::chrono::steady_clock::now() - t0)
                        .count();
  rec.metrics_csv = csv;

  wire::write_file_atomic(out_dir + "/metrics.csv", csv);
  nlohmann::json j{{"last_acc", rec.last_acc},
                   {"best_acc", rec.best_acc},
                   {"best_epoch", rec.best_epoch},
                   {"final_sparsity", rec.final_sparsity},
                   {"wall_time_s", rec.wall_time_s},
                   {"total_iterations", rec.total_iterations},
                   {"exploit_iteration", rec.exploit_iteration},
                   {"n_prunable", rec.n_prunable},
                   {"variant", variant_name(c.variant)},
                   {"z", c.strength},
                   {"seed", c.seed},
                   {"epochs", c.epochs},
                   {"exploit_epoch", c.resolved_exploit_epoch()},
                   {"p_target", c.p_target}};
  wire::write_file_atomic(out_dir + "/summary.json", j.dump(2) + "\n");
  return rec;
}

inline RunRecord train(const RunConfig& c, const std::string& out_dir) {
  c.validate();
  return c.precision == Precision::F64 ? train_impl<double>(c, out_dir)
                                       : train_impl<float>(c, out_dir);
}

}  // namespace mapdp
