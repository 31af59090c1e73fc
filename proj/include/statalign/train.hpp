#pragma once

#include <iostream>
#include <numeric>

#include "statalign/checkpoint.hpp"
#include "statalign/dataset.hpp"
#include "statalign/model.hpp"

namespace statalign {

struct TrainOptions {
    int epochs = 20;
    double lr = 0.05;
    int batch = 32;
    uint64_t seed = 0;
    double momentum = 0.9;
    double stop_train_acc = 0.995;  // early stop on the running train accuracy; >1 disables
    std::ostream* log = nullptr;
};

struct TrainReport {
    std::vector<double> train_acc;  // running estimate per epoch, from training-mode batches
    std::vector<double> val_acc;
    int epochs_run = 0;
    double final_train_acc = 0.0;  // inference-mode pass over the full train set
    double final_val_acc = 0.0;
    double final_loss = 0.0;
};

/// Inference-mode accuracy over a dataset, evaluated in batches.
inline double evaluate_accuracy(Model<float>& model, const Dataset& ds, int batch = 64) {
    int correct = 0;
    std::vector<int> idx(batch);
    for (int start = 0; start < ds.count; start += batch) {
        const int n = std::min(batch, ds.count - start);
        idx.resize(n);
        std::iota(idx.begin(), idx.end(), start);
        auto fwd = model.forward(ds.batch(idx), nullptr, false);
        for (int i = 0; i < n; ++i) {
            const float* row = fwd.logits.data() + static_cast<size_t>(i) * model.num_classes;
            int pred = static_cast<int>(std::max_element(row, row + model.num_classes) - row);
            if (pred == ds.labels[start + i]) ++correct;
        }
    }
    return static_cast<double>(correct) / ds.count;
}

/// Plain SGD with momentum. Aborts with an error if the loss goes non-finite.
inline TrainReport train(Model<float>& model, const Dataset& train_set, const Dataset* val_set,
                         const TrainOptions& opt) {
    for (int l : train_set.labels)
        if (l < 0 || l >= model.num_classes) throw TensorError("training label out of range");

    auto params = model.parameters();
    std::vector<std::vector<float>> velocity;
    for (auto& p : params) velocity.emplace_back(p.tensor.size(), 0.0f);

    Rng shuffle_rng(derive_seed(opt.seed, "train:shuffle:" + model.arch.name));
    std::vector<int> order(train_set.count);
    std::iota(order.begin(), order.end(), 0);

    TrainReport report;
    for (int epoch = 0; epoch < opt.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        int correct = 0;
        double loss_sum = 0.0;
        int batches = 0;
        for (int start = 0; start < train_set.count; start += opt.batch) {
            const int n = std::min(opt.batch, train_set.count - start);
            std::vector<int> idx(order.begin() + start, order.begin() + start + n);
            Tensor<float> x = train_set.batch(idx);
            std::vector<int> y = train_set.batch_labels(idx);

            for (auto& p : params) p.tensor.zero_grad();
            for (auto& p : params) p.tensor.set_requires_grad(p.learnable);
            Tape<float> tape;
            auto fwd = model.forward(x, &tape, true);
            Tensor<float> loss = softmax_cross_entropy(fwd.logits, y, &tape);
            if (!std::isfinite(loss.item()))
                throw TensorError("training diverged: non-finite loss at epoch " + std::to_string(epoch));
            tape.backward(loss);
            loss_sum += loss.item();
            ++batches;

            for (int i = 0; i < n; ++i) {
                const float* row = fwd.logits.data() + static_cast<size_t>(i) * model.num_classes;
                int pred = static_cast<int>(std::max_element(row, row + model.num_classes) - row);
                if (pred == y[i]) ++correct;
            }

            for (size_t pi = 0; pi < params.size(); ++pi) {
                if (!params[pi].learnable) continue;
                float* w = params[pi].tensor.data();
                const float* g = params[pi].tensor.grad();
                float* v = velocity[pi].data();
                for (size_t i = 0; i < params[pi].tensor.size(); ++i) {
                    v[i] = static_cast<float>(opt.momentum) * v[i] + g[i];
                    w[i] -= static_cast<float>(opt.lr) * v[i];
                }
            }
        }
        for (auto& p : params) p.tensor.set_requires_grad(false);

        const double acc = static_cast<double>(correct) / train_set.count;
        report.train_acc.push_back(acc);
        report.final_loss = loss_sum / batches;
        double vacc = -1.0;
        if (val_set) {
            vacc = evaluate_accuracy(model, *val_set);
            report.val_acc.push_back(vacc);
        }
        report.epochs_run = epoch + 1;
        if (opt.log) {
            (*opt.log) << "epoch " << (epoch + 1) << "/" << opt.epochs << "  loss " << report.final_loss
                       << "  train_acc " << acc;
            if (val_set) (*opt.log) << "  val_acc " << vacc;
            (*opt.log) << std::endl;
        }
        if (acc >= opt.stop_train_acc) break;
    }
    report.final_train_acc = evaluate_accuracy(model, train_set);
    if (val_set) report.final_val_acc = evaluate_accuracy(model, *val_set);
    return report;
}

}  // namespace statalign
