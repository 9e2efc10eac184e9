#include "wslmm/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "wslmm/mask_ops.hpp"

namespace wsl {

template <typename T>
Tensor<T> stack_images(const std::vector<SampleRecord>& records) {
  if (records.empty()) throw std::invalid_argument("stack_images: empty batch");
  const Shape s = records.front().image.shape;
  const std::size_t img = numel(s);
  Tensor<T> out(Shape{records.size(), s[0], s[1], s[2]});
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].image.shape != s) {
      throw std::invalid_argument("stack_images: image " + records[i].id + " has shape " +
                                  shape_str(records[i].image.shape) + ", expected " + shape_str(s));
    }
    std::copy(records[i].image.data.begin(), records[i].image.data.end(), out.data.begin() + i * img);
  }
  return out;
}

namespace {

template <typename T>
std::size_t argmax_row(const Tensor<T>& probs, std::size_t row) {
  const std::size_t c = probs.dim(1);
  std::size_t best = 0;
  for (std::size_t k = 1; k < c; ++k)
    if (probs.data[row * c + k] > probs.data[row * c + best]) best = k;
  return best;
}

template <typename T>
ag::Var<T> mask_batch(const std::vector<PseudoMask<T>>& masks, bool plus) {
  const std::size_t h = masks.front().r_plus.dim(0), w = masks.front().r_plus.dim(1);
  Tensor<T> t(Shape{masks.size(), h, w});
  for (std::size_t i = 0; i < masks.size(); ++i) {
    const auto& src = plus ? masks[i].r_plus : masks[i].r_minus;
    std::copy(src.data.begin(), src.data.end(), t.data.begin() + i * h * w);
  }
  return ag::Var<T>::constant(std::move(t));
}

std::vector<std::size_t> labels_of(const std::vector<SampleRecord>& records) {
  std::vector<std::size_t> y(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) y[i] = records[i].label;
  return y;
}

}  // namespace

template <typename T>
Trainer<T>::Trainer(HyperConfig config, std::size_t classes, std::size_t in_channels)
    : config_(std::move(config)),
      model_(config_.net(classes, in_channels), config_.seed),
      rng_(config_.seed ^ 0xD1B54A32D192ED03ull) {
  config_.validate();
  for (const auto& p : model_.named_parameters()) momentum_.emplace_back(p.var.shape());
}

template <typename T>
StepStats Trainer<T>::train_step(const std::vector<SampleRecord>& batch, double lr) {
  const std::size_t n = batch.size();
  const auto labels = labels_of(batch);
  const Tensor<T> images = stack_images<T>(batch);
  const std::size_t h = images.dim(2), w = images.dim(3);
  const auto& lw = config_.loss_weights;

  model_.zero_grad();
  StepStats st;

  // Localizer: recursive erasing accumulates the secondary-loss gradients.
  const LocalizerFn<T> loc = [this](const ag::Var<T>& x) { return model_.localize(x, true, &rng_); };
  auto er = run_recursive_erasing(images, std::span<const std::size_t>(labels), loc, config_.erasing());

  // Classifier on the visible and the erased content of the accumulated mask.
  const auto x = ag::Var<T>::constant(images);
  const auto p_pos = model_.classify(apply_mask(x, mask_batch(er.masks, true)));
  const auto p_neg = model_.classify(apply_mask(x, mask_batch(er.masks, false)));
  const auto l_pos = loss_positive(p_pos, std::span<const std::size_t>(labels));
  const auto l_neg = loss_negative(p_neg);
  ag::backward(ag::add(ag::affine(ag::sum(l_pos), lw.pos, 0.0), ag::affine(ag::sum(l_neg), lw.neg, 0.0)));

  st.losses.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    st.losses[i] = {static_cast<double>(l_pos.value().data[i]),
                    static_cast<double>(l_neg.value().data[i]), er.l_sec[i]};
    const auto& s = st.losses[i];
    if (!std::isfinite(s.pos) || !std::isfinite(s.neg) || !std::isfinite(s.sec)) {
      throw std::runtime_error("non-finite loss at epoch " + std::to_string(epoch_) + ", batch " +
                               std::to_string(batch_) + ", sample " + batch[i].id);
    }
    st.correct += argmax_row(p_pos.value(), i) == labels[i];
  }
  st.forwards = std::move(er.forwards);
  st.log = std::move(er.log);

  sgd_update(lr, 1.0 / static_cast<double>(n));
  return st;
}

template <typename T>
void Trainer<T>::sgd_update(double lr, double scale) {
  const auto params = model_.named_parameters();
  const T mu = static_cast<T>(config_.momentum);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& node = *params[k].var.node();
    auto& buf = momentum_[k].data;
    const T wd = params[k].decay ? static_cast<T>(config_.weight_decay) : T(0);
    const bool has_grad = node.grad.size() == node.value.size();
    for (std::size_t i = 0; i < node.value.size(); ++i) {
      T g = wd * node.value.data[i];
      if (has_grad) g += static_cast<T>(scale) * node.grad[i];
      buf[i] = mu * buf[i] + g;
      if (config_.nesterov) g += mu * buf[i];
      else g = buf[i];
      node.value.data[i] -= static_cast<T>(lr) * g;
    }
  }
}

template <typename T>
Predictions Trainer<T>::predict(const std::vector<SampleRecord>& records, bool with_losses) {
  Predictions out;
  const std::size_t before = model_.localizer_forwards();
  const std::size_t bs = std::max<std::size_t>(config_.batch_size, 1);
  for (std::size_t start = 0; start < records.size(); start += bs) {
    std::vector<SampleRecord> batch(records.begin() + static_cast<std::ptrdiff_t>(start),
                                    records.begin() + static_cast<std::ptrdiff_t>(std::min(start + bs, records.size())));
    for (auto& r : batch) normalize(r);
    const Tensor<T> images = stack_images<T>(batch);
    const std::size_t n = batch.size(), h = images.dim(2), w = images.dim(3);
    const auto x = ag::Var<T>::constant(images);
    const auto stack = model_.localize(x, false, nullptr);
    const auto r = relevance_mask(stack, h, w, config_.omega, config_.sigma_prime);
    const auto probs = model_.classify(apply_mask(x, r));
    const std::size_t c = probs.shape()[1];
    for (std::size_t i = 0; i < n; ++i) {
      out.labels.push_back(argmax_row(probs.value(), i));
      Tensor<double> m(Shape{h, w});
      for (std::size_t p = 0; p < h * w; ++p) m.data[p] = static_cast<double>(r.value().data[i * h * w + p]);
      out.masks.push_back(std::move(m));
      std::vector<double> pr(c);
      for (std::size_t k = 0; k < c; ++k) pr[k] = static_cast<double>(probs.value().data[i * c + k]);
      out.probs.push_back(std::move(pr));
    }
    if (with_losses) {
      const auto labels = labels_of(batch);
      const std::span<const std::size_t> ys(labels);
      const auto lp = loss_positive(probs, ys);
      const auto ln = loss_negative(model_.classify(apply_mask(x, complement(r))));
      const auto ls = loss_secondary(stack.probs, ys);
      for (std::size_t i = 0; i < n; ++i) {
        out.losses.push_back({static_cast<double>(lp.value().data[i]),
                              static_cast<double>(ln.value().data[i]),
                              static_cast<double>(ls.value().data[i])});
      }
    }
  }
  out.localizer_forwards = model_.localizer_forwards() - before;
  return out;
}

template <typename T>
FitResult Trainer<T>::fit(const std::vector<SampleRecord>& train,
                          const std::vector<SampleRecord>& valid, std::ostream* progress) {
  if (train.empty() || valid.empty()) throw std::invalid_argument("fit: empty train or valid set");
  FitResult res;
  std::vector<Tensor<T>> best;
  double best_err = 0, best_loss = 0;
  const auto ops = config_.augment();
  const auto valid_labels = labels_of(valid);

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t e = 0; e < config_.max_epochs; ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    epoch_ = e;
    EpochStats es;
    es.epoch = e;
    es.lr = config_.lr_at(e);
    std::shuffle(order.begin(), order.end(), rng_);
    std::vector<SampleLoss> parts;
    std::size_t correct = 0;
    const std::size_t f0 = model_.localizer_forwards();
    for (std::size_t start = 0, b = 0; start < order.size(); start += config_.batch_size, ++b) {
      batch_ = b;
      std::vector<SampleRecord> batch;
      std::vector<std::string> ids;
      for (std::size_t j = start; j < std::min(start + config_.batch_size, order.size()); ++j) {
        batch.push_back(augment_normalize(train[order[j]], ops, true, rng_));
        ids.push_back(batch.back().id);
      }
      auto st = train_step(batch, es.lr);
      parts.insert(parts.end(), st.losses.begin(), st.losses.end());
      correct += st.correct;
      for (auto f : st.forwards) es.max_forwards_per_sample = std::max(es.max_forwards_per_sample, f);
      if (log_fn_) log_fn_(e, b, ids, st.log);
    }
    es.localizer_forwards = model_.localizer_forwards() - f0;
    es.train = total_loss(parts, config_.loss_weights);
    es.train_error = 100.0 * static_cast<double>(train.size() - correct) / static_cast<double>(train.size());

    const auto pv = predict(valid, true);
    es.valid_error = classification_error(pv.labels, valid_labels);
    es.valid_loss = total_loss(pv.losses, config_.loss_weights).total;
    es.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.epochs.push_back(es);
    if (progress) {
      *progress << "epoch " << e << " lr " << es.lr << " loss " << es.train.total << " train_err "
                << es.train_error << " valid_err " << es.valid_error << " valid_loss "
                << es.valid_loss << " (" << es.seconds << " s)\n";
    }

    const bool better = best.empty() || es.valid_error < best_err ||
                        (es.valid_error == best_err && es.valid_loss < best_loss);
    if (better) {
      best_err = es.valid_error;
      best_loss = es.valid_loss;
      res.best_epoch = e;
      best.clear();
      for (const auto& p : model_.named_parameters()) best.push_back(p.var.value());
    } else if (config_.patience > 0 && e - res.best_epoch >= config_.patience) {
      res.stopped_early = true;
      break;
    }
  }
  const auto params = model_.named_parameters();
  for (std::size_t k = 0; k < params.size(); ++k) params[k].var.node()->value = best[k];
  return res;
}

#define WSL_INSTANTIATE(T)                                                        \
  template Tensor<T> stack_images<T>(const std::vector<SampleRecord>&);            \
  template class Trainer<T>;

WSL_INSTANTIATE(float)
WSL_INSTANTIATE(double)

#undef WSL_INSTANTIATE

}  // namespace wsl
