#include "m3net/training.hpp"

#include <deque>
#include <fstream>

namespace m3net {

double poly_lr(int64_t iter, int64_t max_iter, double base, double power) {
    if (max_iter < 1) throw ValidationError("poly_lr: max_iter must be >= 1");
    if (iter < 0 || iter > max_iter)
        throw ValidationError("poly_lr: iter " + std::to_string(iter) + " outside [0," +
                              std::to_string(max_iter) + "]");
    if (!(base > 0) || !(power > 0)) throw ValidationError("poly_lr: base and power must be > 0");
    return base * std::pow(1.0 - static_cast<double>(iter) / static_cast<double>(max_iter), power);
}

template <typename T>
void Adam<T>::step(ParamStore<T>& params, T lr, T weight_decay, T grad_clip) {
    if (lr < T(0)) throw ValidationError("adam: negative learning rate");
    ++step_count_;
    const T bc1 = T(1) - static_cast<T>(std::pow(static_cast<double>(beta1_), step_count_));
    const T bc2 = T(1) - static_cast<T>(std::pow(static_cast<double>(beta2_), step_count_));

    // optional global-norm clipping
    T clip_scale = T(1);
    if (grad_clip > T(0)) {
        double norm2 = 0.0;
        for (auto& e : params.entries()) {
            if (!e.trainable || e.tensor.grad().empty()) continue;
            for (T g : e.tensor.grad()) norm2 += static_cast<double>(g) * static_cast<double>(g);
        }
        double norm = std::sqrt(norm2);
        if (norm > static_cast<double>(grad_clip)) clip_scale = static_cast<T>(grad_clip / norm);
    }

    for (auto& e : params.entries()) {
        if (!e.trainable) continue;
        if (e.tensor.grad().empty()) e.tensor.zero_grad();
        auto& slot = slots_[e.name];
        if (slot.m.size() != e.tensor.data().size()) {
            slot.m.assign(e.tensor.data().size(), T(0));
            slot.v.assign(e.tensor.data().size(), T(0));
        }
        auto& value = e.tensor.data();
        const auto& grad = e.tensor.grad();
        for (size_t i = 0; i < value.size(); ++i) {
            T g = grad[i] * clip_scale;
            if (!std::isfinite(static_cast<double>(g)))
                throw std::runtime_error("non-finite gradient in parameter '" + e.name + "'; run aborted");
            if (weight_decay > T(0)) g += weight_decay * value[i];
            slot.m[i] = beta1_ * slot.m[i] + (T(1) - beta1_) * g;
            slot.v[i] = beta2_ * slot.v[i] + (T(1) - beta2_) * g * g;
            T m_hat = slot.m[i] / bc1;
            T v_hat = slot.v[i] / bc2;
            value[i] -= lr * m_hat / (std::sqrt(v_hat) + eps_);
        }
    }
}

template <typename T>
Tensor<T> batch_input(const std::vector<const TileSample*>& batch, const std::string& sensor) {
    if (batch.empty()) throw ValidationError("batch_input: empty batch");
    const SensorPatch& first = batch[0]->sensors.at(sensor);
    int64_t n = static_cast<int64_t>(batch.size());
    Tensor<T> out = Tensor<T>::zeros({n, first.channels, first.px, first.px});
    int64_t stride = first.channels * first.px * first.px;
    for (int64_t b = 0; b < n; ++b) {
        const SensorPatch& p = batch[b]->sensors.at(sensor);
        if (p.channels != first.channels || p.px != first.px)
            throw ValidationError("batch_input: inconsistent tile shapes for sensor '" + sensor + "'");
        for (int64_t i = 0; i < stride; ++i) out.data()[b * stride + i] = static_cast<T>(p.chw[i]);
    }
    return out;
}

namespace {

std::vector<int32_t> batch_target(const std::vector<const TileSample*>& batch) {
    int64_t px = batch[0]->label.spec.width;
    std::vector<int32_t> target;
    target.reserve(batch.size() * px * px);
    for (const TileSample* t : batch) {
        if (t->label.spec.width != px || t->label.spec.height != px)
            throw ValidationError("batch: inconsistent label grids");
        for (uint8_t v : t->label.v) target.push_back(v ? 1 : 0);
    }
    return target;
}

}  // namespace

template <typename T>
IouMetrics evaluate(FusionModel<T>& model, const std::vector<TileSample>& tiles, ConfusionMatrix* out_cm) {
    if (tiles.empty()) throw ValidationError("evaluate: no tiles");
    NoGradGuard guard;
    ConfusionMatrix cm;
    for (const TileSample& tile : tiles) {
        std::map<std::string, Tensor<T>> inputs;
        for (const auto& sc : model.config().streams)
            inputs[sc.sensor] = batch_input<T>({&tile}, sc.sensor);
        Tensor<T> logits = model.forward(inputs, false);
        int64_t h = logits.dim(2), w = logits.dim(3);
        std::vector<float> lf(logits.data().size());
        for (size_t i = 0; i < lf.size(); ++i) lf[i] = static_cast<float>(logits.data()[i]);
        LabelGrid pred = argmax_binary(lf, h, w, tile.label.spec);
        cm += confusion(pred, tile.label);
    }
    if (out_cm) *out_cm = cm;
    return iou_metrics(cm);
}

template <typename T>
TrainResult train(FusionModel<T>& model, const std::vector<TileSample>& train_tiles,
                  const std::vector<TileSample>& val_tiles, const TrainConfig& config,
                  const std::function<void(const LogEntry&)>& on_log) {
    if (train_tiles.empty()) throw ValidationError("train: no training tiles");
    if (config.batch_size < 1 || !(config.base_lr > 0) || !(config.poly_power > 0))
        throw ValidationError("train: bad config (batch >= 1, base lr > 0, power > 0)");
    bool any_positive = false;
    for (const auto& t : train_tiles)
        for (uint8_t v : t.label.v)
            if (v) {
                any_positive = true;
                break;
            }
    if (!any_positive)
        throw ValidationError("train: dataset has no positive pixels for task '" + config.task +
                              "'; the loss is degenerate");

    Rng rng = Rng(config.seed).stream("train");
    Adam<T> adam;
    TrainResult result;
    std::deque<double> window;

    std::ofstream log_file;
    if (!config.out_dir.empty()) {
        std::filesystem::create_directories(config.out_dir);
        log_file.open(config.out_dir / "metrics.jsonl", std::ios::trunc);
    }

    auto emit = [&](const LogEntry& entry) {
        result.log.push_back(entry);
        if (log_file.is_open()) {
            nlohmann::json j = {{"iteration", entry.iteration}, {"loss", entry.loss}, {"lr", entry.lr}};
            if (entry.val_miou >= 0) j["val_miou"] = entry.val_miou;
            log_file << j.dump() << "\n";
            log_file.flush();
        }
        if (on_log) on_log(entry);
    };

    auto save_ckpt = [&](const std::string& stem) {
        if (config.out_dir.empty()) return;
        save_checkpoint(config.out_dir / (stem + ".m3nc"), model.to_checkpoint());
        std::ofstream meta(config.out_dir / "model.json");
        meta << model.metadata().dump(2) << "\n";
    };

    int64_t iter = 0;
    for (; iter < config.max_iter; ++iter) {
        // sample uniformly with replacement, one random dihedral op per sample
        std::vector<TileSample> batch_storage;
        batch_storage.reserve(config.batch_size);
        for (int64_t b = 0; b < config.batch_size; ++b) {
            int64_t idx = rng.uniform_int(0, static_cast<int64_t>(train_tiles.size()) - 1);
            int op = static_cast<int>(rng.uniform_int(0, kDihedralOps - 1));
            batch_storage.push_back(augment(train_tiles[idx], op));
        }
        std::vector<const TileSample*> batch;
        for (const auto& t : batch_storage) batch.push_back(&t);

        std::map<std::string, Tensor<T>> inputs;
        for (const auto& sc : model.config().streams)
            inputs[sc.sensor] = batch_input<T>(batch, sc.sensor);
        std::vector<int32_t> target = batch_target(batch);

        model.params().zero_grad();
        Tensor<T> logits = model.forward(inputs, true);
        Tensor<T> loss = softmax_cross_entropy(logits, target);
        loss.backward();
        double lr = poly_lr(iter, config.max_iter, config.base_lr, config.poly_power);
        adam.step(model.params(), static_cast<T>(lr), static_cast<T>(config.weight_decay),
                  static_cast<T>(config.grad_clip));

        double loss_value = static_cast<double>(loss.item());
        LogEntry entry{iter, loss_value, lr, -1.0};
        if (config.eval_interval > 0 && !val_tiles.empty() &&
            ((iter + 1) % config.eval_interval == 0 || iter + 1 == config.max_iter))
            entry.val_miou = evaluate(model, val_tiles).miou;
        emit(entry);

        if (config.checkpoint_interval > 0 && (iter + 1) % config.checkpoint_interval == 0)
            save_ckpt("checkpoint_" + std::to_string(iter + 1));

        result.final_loss = loss_value;

        // convergence: the moving average over the window must keep improving
        window.push_back(loss_value);
        if (static_cast<int64_t>(window.size()) > 2 * config.convergence_window) window.pop_front();
        if (static_cast<int64_t>(window.size()) == 2 * config.convergence_window) {
            double prev = 0, now = 0;
            for (int64_t i = 0; i < config.convergence_window; ++i) {
                prev += window[i];
                now += window[i + config.convergence_window];
            }
            prev /= static_cast<double>(config.convergence_window);
            now /= static_cast<double>(config.convergence_window);
            if (prev - now < config.convergence_delta * std::max(prev, 1e-12)) {
                result.converged = true;
                ++iter;
                break;
            }
        }
    }
    result.iterations = iter;
    save_ckpt("checkpoint");
    return result;
}

template <typename T>
TransferReport transfer_init(FusionModel<T>& model, const Checkpoint& ckpt) {
    TransferReport report;
    std::map<std::string, const CheckpointEntry*> by_name;
    for (const auto& e : ckpt) by_name[e.name] = &e;
    std::vector<std::string> conflicts;

    for (auto& e : model.params().entries()) {
        auto it = by_name.find(e.name);
        if (it == by_name.end()) {
            report.unmatched_model.push_back(e.name);
            continue;
        }
        const CheckpointEntry& src = *it->second;
        const Shape& want = e.tensor.shape();
        if (src.shape == want) {
            e.tensor.data() = src.template values<T>();
            report.loaded.push_back(e.name);
        } else if (src.shape.size() == 4 && want.size() == 4 && src.shape[1] == 3 && want[1] > 3 &&
                   src.shape[0] == want[0] && src.shape[2] == want[2] && src.shape[3] == want[3]) {
            Tensor<T> kernel = Tensor<T>::from(src.shape, src.template values<T>());
            e.tensor.data() = extend_input_channels(kernel, want[1]).data();
            report.extended.push_back(e.name);
        } else {
            conflicts.push_back(e.name + " (" + shape_str(src.shape) + " vs " + shape_str(want) + ")");
        }
    }
    if (!conflicts.empty()) {
        std::string msg = "transfer_init: unresolvable shape conflicts:";
        for (const auto& c : conflicts) msg += " " + c;
        throw ValidationError(msg);
    }
    for (const auto& e : ckpt)
        if (!model.params().has(e.name)) report.unmatched_checkpoint.push_back(e.name);
    return report;
}

template class Adam<float>;
template class Adam<double>;

#define M3NET_TRAIN_INSTANTIATE(T)                                                                   \
    template IouMetrics evaluate<T>(FusionModel<T>&, const std::vector<TileSample>&, ConfusionMatrix*); \
    template Tensor<T> batch_input<T>(const std::vector<const TileSample*>&, const std::string&);    \
    template TrainResult train<T>(FusionModel<T>&, const std::vector<TileSample>&,                   \
                                  const std::vector<TileSample>&, const TrainConfig&,                \
                                  const std::function<void(const LogEntry&)>&);                      \
    template TransferReport transfer_init<T>(FusionModel<T>&, const Checkpoint&);

M3NET_TRAIN_INSTANTIATE(float)
M3NET_TRAIN_INSTANTIATE(double)

}  // namespace m3net
