#include "dla/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <cstdio>
#include <fstream>
#include <limits>
#include <mutex>
#include <thread>

#include "dla/error.hpp"
#include "dla/rng.hpp"

namespace dla {

namespace {

std::vector<const Tensor*> tensors_of(const ModelParams& p) {
    std::vector<const Tensor*> out;
    p.for_each_tensor([&](const Tensor& t) { out.push_back(&t); });
    return out;
}

std::vector<Tensor*> tensors_of(ModelParams& p) {
    std::vector<Tensor*> out;
    p.for_each_tensor([&](Tensor& t) { out.push_back(&t); });
    return out;
}

void check_congruent(const std::vector<const Tensor*>& a, const std::vector<const Tensor*>& b,
                     const char* what) {
    if (a.size() != b.size()) throw ShapeError(std::string(what) + ": tensor count mismatch");
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i]->shape != b[i]->shape) throw ShapeError(std::string(what) + ": shape mismatch");
}

double batch_mean_loss(const Architecture& arch, const ModelParams& params,
                       const double* values, const std::uint8_t* labels, int b) {
    std::vector<double> logits(std::size_t(b) * arch.n_classes);
    forward(arch, params, values, b, logits.data());
    double sum = 0.0;
    for (int i = 0; i < b; ++i) {
        const double* z = logits.data() + std::size_t(i) * arch.n_classes;
        double m = z[0];
        for (int c = 1; c < arch.n_classes; ++c) m = std::max(m, z[c]);
        double s = 0.0;
        for (int c = 0; c < arch.n_classes; ++c) s += std::exp(z[c] - m);
        sum += m + std::log(s) - z[labels[i] - 1];
    }
    return sum / b;
}

}  // namespace

void TrainConfig::validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be positive");
    if (n_workers < 1) throw ConfigError("n_workers must be positive");
    if (batch_size % n_workers != 0)
        throw ConfigError("batch_size must be divisible by n_workers");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
    if (lr_points.empty()) throw ConfigError("lr_points must not be empty");
    if (lr_points.front().epoch != 0.0)
        throw ConfigError("lr_points must start at epoch 0");
    double prev_e = -1.0, prev_r = std::numeric_limits<double>::infinity();
    for (const auto& pt : lr_points) {
        if (!(pt.rate > 0.0)) throw ConfigError("learning rates must be positive");
        if (pt.rate > prev_r) throw ConfigError("learning rates must be non-increasing");
        if (pt.epoch <= prev_e) throw ConfigError("lr epochs must be strictly increasing");
        prev_e = pt.epoch;
        prev_r = pt.rate;
    }
    if (max_iterations < 1) throw ConfigError("max_iterations must be positive");
    if (eval_interval < 1) throw ConfigError("eval_interval must be positive");
    if (patience < 1) throw ConfigError("patience must be positive");
    if (!(min_delta >= 0.0)) throw ConfigError("min_delta must be non-negative");
    if (val_subsample < 1) throw ConfigError("val_subsample must be positive");
}

double lr_at(std::int64_t iteration, std::int64_t iters_per_epoch,
             const std::vector<LrPoint>& points) {
    if (iteration < 0) throw ConfigError("lr_at: negative iteration");
    if (iters_per_epoch < 1) throw ConfigError("lr_at: iters_per_epoch must be positive");
    if (points.empty()) throw ConfigError("lr_at: no schedule points");
    double fraction = static_cast<double>(iteration) / static_cast<double>(iters_per_epoch);
    double rate = points.front().rate;
    for (const auto& pt : points)
        if (fraction >= pt.epoch) rate = pt.rate;
    return rate;
}

void sgd_step(ModelParams& params, Velocity& velocity, const Gradients& grads, double lr,
              double momentum) {
    auto pt = tensors_of(params);
    auto vt = tensors_of(velocity);
    auto gt = tensors_of(grads);
    check_congruent({pt.begin(), pt.end()}, {vt.begin(), vt.end()}, "sgd_step velocity");
    check_congruent({pt.begin(), pt.end()}, gt, "sgd_step gradients");
    for (std::size_t t = 0; t < pt.size(); ++t) {
        double* p = pt[t]->data();
        double* v = vt[t]->data();
        const double* g = gt[t]->data();
        for (std::size_t i = 0, n = pt[t]->size(); i < n; ++i) {
            v[i] = momentum * v[i] - lr * g[i];
            p[i] += v[i];
        }
    }
}

Gradients sync_aggregate(const std::vector<Gradients>& worker_grads,
                         const std::vector<int>& worker_batch_sizes) {
    if (worker_grads.empty() || worker_grads.size() != worker_batch_sizes.size())
        throw ShapeError("sync_aggregate: need one batch size per worker gradient");
    std::int64_t total = 0;
    for (int b : worker_batch_sizes) {
        if (b < 1) throw ShapeError("sync_aggregate: batch sizes must be positive");
        total += b;
    }
    std::vector<std::vector<const Tensor*>> lists;
    for (const auto& g : worker_grads) lists.push_back(tensors_of(g));
    for (std::size_t w = 1; w < lists.size(); ++w)
        check_congruent(lists[0], lists[w], "sync_aggregate");

    Gradients out = worker_grads[0];  // shapes; values overwritten below
    auto ot = tensors_of(out);
    std::vector<double> weights(worker_grads.size());
    for (std::size_t w = 0; w < weights.size(); ++w)
        weights[w] = static_cast<double>(worker_batch_sizes[w]) / static_cast<double>(total);
    for (std::size_t t = 0; t < ot.size(); ++t) {
        double* o = ot[t]->data();
        for (std::size_t i = 0, n = ot[t]->size(); i < n; ++i) {
            double acc = 0.0;
            for (std::size_t w = 0; w < lists.size(); ++w)
                acc += weights[w] * lists[w][t]->data()[i];
            o[i] = acc;
        }
    }
    return out;
}

void save_history(const TrainHistory& h, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    char buf[512];
    os << "# iters_per_epoch = " << h.iters_per_epoch << "\n";
    os << "# stop_reason = " << h.stop_reason << "\n";
    os << "# best_iteration = " << h.best_iteration << "\n";
    os << "iteration\tlr\ttrain_loss\tval_loss\tval_acc\n";
    for (const auto& r : h.records) {
        std::snprintf(buf, sizeof buf, "%lld\t%.17g\t%.17g\t%.17g\t%.17g\n",
                      static_cast<long long>(r.iteration), r.lr, r.train_loss, r.val_loss,
                      r.val_acc);
        os << buf;
    }
    if (!os) throw IoError("write failed: " + path.string());
}

std::pair<ModelParams, TrainHistory> train(const TrainConfig& cfg, const Architecture& arch,
                                           const std::vector<const Volume*>& train_fills,
                                           const std::vector<const LabeledVoxelSet*>& train_sets,
                                           const std::vector<const Volume*>& val_fills,
                                           const std::vector<const LabeledVoxelSet*>& val_sets) {
    cfg.validate();
    arch.validate();
    if (train_fills.empty()) throw DataError("train: no training cases");
    if (val_fills.empty() || val_fills.size() != val_sets.size())
        throw DataError("train: validation cases and sets must match and be non-empty");

    BalancedSampler sampler(train_fills, train_sets, arch.patch_p, arch.patch_s,
                            derive_seed(cfg.seed, "train.sampler"));

    // fixed seeded validation subsample, chosen once and reused at every eval
    struct ValRef {
        int case_id;
        std::int64_t index;
        std::uint8_t cls;
    };
    std::vector<ValRef> all_val;
    for (std::size_t ci = 0; ci < val_sets.size(); ++ci)
        for (const auto& e : val_sets[ci]->entries)
            all_val.push_back({static_cast<int>(ci), e.index, e.cls});
    if (all_val.empty()) throw DataError("train: validation set is empty");
    const int n_val = static_cast<int>(
        std::min<std::size_t>(all_val.size(), static_cast<std::size_t>(cfg.val_subsample)));
    {
        Rng vrng(derive_seed(cfg.seed, "train.val"));
        for (int i = 0; i < n_val; ++i) {
            int j = i + vrng.uniform_int(0, static_cast<int>(all_val.size()) - 1 - i);
            std::swap(all_val[i], all_val[j]);
        }
    }
    const std::size_t sample_len =
        std::size_t(arch.patch_s) * arch.patch_p * arch.patch_p;
    std::vector<double> val_values(std::size_t(n_val) * sample_len);
    std::vector<std::uint8_t> val_labels(n_val);
    for (int i = 0; i < n_val; ++i) {
        extract_patch_into(*val_fills[all_val[i].case_id], all_val[i].index, arch.patch_p,
                           arch.patch_s, val_values.data() + std::size_t(i) * sample_len);
        val_labels[i] = all_val[i].cls;
    }

    ModelParams params = init_params(arch, derive_seed(cfg.seed, "train.init"));
    Velocity velocity = zeros_like(arch);

    TrainHistory history;
    history.iters_per_epoch = std::max<std::int64_t>(
        1, std::llround(3.0 * static_cast<double>(sampler.pool_size(kClassVessel)) /
                        cfg.batch_size));

    const int K = cfg.n_workers;
    const int shard = cfg.batch_size / K;
    std::vector<Gradients> wgrads;
    for (int w = 0; w < K; ++w) wgrads.push_back(zeros_like(arch));
    std::vector<double> wloss(K, 0.0);
    std::vector<int> wsizes(K, shard);
    std::vector<std::exception_ptr> werr(K);

    // persistent worker pool; workers read the parameter snapshot, the
    // sequencer alone mutates it between generations
    Batch batch;
    std::mutex mtx;
    std::condition_variable cv_start, cv_done;
    std::int64_t generation = 0;
    int done = 0;
    bool quit = false;

    auto worker_body = [&](int w) {
        std::int64_t seen = 0;
        for (;;) {
            {
                std::unique_lock<std::mutex> lk(mtx);
                cv_start.wait(lk, [&] { return quit || generation > seen; });
                if (quit) return;
                seen = generation;
            }
            try {
                wloss[w] = loss_and_grad(
                    arch, params, batch.values.data() + std::size_t(w) * shard * sample_len,
                    batch.labels.data() + std::size_t(w) * shard, shard, wgrads[w]);
            } catch (...) {
                werr[w] = std::current_exception();
            }
            {
                std::lock_guard<std::mutex> lk(mtx);
                if (++done == K) cv_done.notify_all();
            }
        }
    };

    struct PoolGuard {
        std::vector<std::thread> threads;
        std::mutex& mtx;
        std::condition_variable& cv_start;
        bool& quit;
        ~PoolGuard() {
            {
                std::lock_guard<std::mutex> lk(mtx);
                quit = true;
            }
            cv_start.notify_all();
            for (auto& t : threads) t.join();
        }
    } pool{{}, mtx, cv_start, quit};
    for (int w = 0; w < K; ++w) pool.threads.emplace_back(worker_body, w);

    ModelParams best_params = params;
    double best_loss = 0.0;
    bool have_best = false;
    int fails = 0;
    history.stop_reason = "max_iterations";

    std::vector<double> val_logits(std::size_t(n_val) * arch.n_classes);
    auto evaluate = [&](std::int64_t it, double train_loss) -> bool {
        forward(arch, params, val_values.data(), n_val, val_logits.data());
        double loss_sum = 0.0;
        int correct = 0;
        for (int i = 0; i < n_val; ++i) {
            const double* z = val_logits.data() + std::size_t(i) * arch.n_classes;
            double m = z[0];
            for (int c = 1; c < arch.n_classes; ++c) m = std::max(m, z[c]);
            double s = 0.0;
            for (int c = 0; c < arch.n_classes; ++c) s += std::exp(z[c] - m);
            loss_sum += m + std::log(s) - z[val_labels[i] - 1];
            if (argmax_class(z, arch.n_classes) == val_labels[i]) ++correct;
        }
        double val_loss = loss_sum / n_val;
        double val_acc = static_cast<double>(correct) / n_val;
        history.records.push_back(
            {it, lr_at(it, history.iters_per_epoch, cfg.lr_points), train_loss, val_loss,
             val_acc});
        bool improved = !have_best || val_loss < best_loss - cfg.min_delta;
        if (!have_best || val_loss < best_loss) {
            best_loss = val_loss;
            best_params = params;
            history.best_iteration = it;
        }
        have_best = true;
        if (improved)
            fails = 0;
        else
            ++fails;
        return fails >= cfg.patience;
    };

    batch = sampler.next_batch(cfg.batch_size);
    evaluate(0, batch_mean_loss(arch, params, batch.values.data(), batch.labels.data(),
                                cfg.batch_size));

    for (std::int64_t it = 1; it <= cfg.max_iterations; ++it) {
        if (it > 1) batch = sampler.next_batch(cfg.batch_size);
        {
            std::lock_guard<std::mutex> lk(mtx);
            done = 0;
            ++generation;
        }
        cv_start.notify_all();
        {
            std::unique_lock<std::mutex> lk(mtx);
            cv_done.wait(lk, [&] { return done == K; });
        }
        for (auto& e : werr)
            if (e) std::rethrow_exception(e);

        double train_loss = 0.0;
        for (int w = 0; w < K; ++w)
            train_loss += wloss[w] * (static_cast<double>(shard) / cfg.batch_size);
        if (!std::isfinite(train_loss))
            throw NumericalError("training diverged: non-finite loss at iteration " +
                                 std::to_string(it));

        Gradients agg = sync_aggregate(wgrads, wsizes);
        sgd_step(params, velocity, agg, lr_at(it, history.iters_per_epoch, cfg.lr_points),
                 cfg.momentum);

        if (it % cfg.eval_interval == 0 || it == cfg.max_iterations) {
            if (evaluate(it, train_loss)) {
                history.stop_reason = "early_stop";
                break;
            }
        }
    }

    history.best_val_loss = best_loss;
    return {std::move(best_params), std::move(history)};
}

}  // namespace dla
