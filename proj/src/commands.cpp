#include "wslmm/commands.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>
#include <optional>
#include <stdexcept>
#include <tuple>

#include "wslmm/config.hpp"
#include "wslmm/data.hpp"
#include "wslmm/metrics.hpp"
#include "wslmm/train.hpp"

namespace wsl {

namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

std::string join(const std::vector<std::string>& v, char sep) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? std::string(1, sep) : "") + v[i];
  return s;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, sep);) out.push_back(item);
  return out;
}

std::optional<fs::path> find_masks(const fs::path& data) {
  for (const auto& cand : {data / "masks", data.parent_path() / "masks"})
    if (fs::is_directory(cand)) return cand;
  return std::nullopt;
}

// Keys a checkpoint stores on top of the training configuration.
const char* kExtraKeys[] = {"in_channels", "class_names", "best_epoch"};

struct ModelInfo {
  HyperConfig config;
  std::size_t classes = 0;
  std::size_t in_channels = 3;
  std::vector<std::string> class_names;
};

ModelInfo model_info(const Checkpoint& ck) {
  ModelInfo info;
  KeyValues kv = ck.config;
  if (!kv.count("in_channels") || !kv.count("class_names") || !kv.count("classes")) {
    throw std::runtime_error("checkpoint: missing model description keys");
  }
  info.in_channels = std::stoul(kv.at("in_channels"));
  info.class_names = split(kv.at("class_names"), ',');
  for (const char* k : kExtraKeys) kv.erase(k);
  info.config = HyperConfig::from_key_values(kv);
  info.classes = info.config.classes;
  if (info.classes != info.class_names.size()) throw std::runtime_error("checkpoint: class list inconsistent");
  return info;
}

template <typename T>
Trainer<T> restore(const Checkpoint& ck, const ModelInfo& info) {
  Trainer<T> tr(info.config, info.classes, info.in_channels);
  load_parameters(tr.model(), ck);
  return tr;
}

template <typename T>
void train_impl(HyperConfig cfg, bool log_erasing, std::ostream& log) {
  const fs::path data(cfg.data), out(cfg.out);
  if (cfg.data.empty()) throw std::invalid_argument("config: 'data' is required");
  fs::create_directories(out);
  const LoadOptions lo{cfg.height, cfg.width};
  const auto masks = find_masks(data);

  auto train_ds = load_folder(data / "train", masks, lo);
  std::vector<SampleRecord> train, valid;
  if (fs::is_directory(data / "valid")) {
    auto valid_ds = load_folder(data / "valid", masks, lo);
    if (valid_ds.class_names != train_ds.class_names) {
      throw std::runtime_error("train and valid class directories differ");
    }
    train = std::move(train_ds.records);
    valid = std::move(valid_ds.records);
  } else {
    std::tie(train, valid) = make_splits(train_ds.records, {0.8, 0.2}, cfg.seed);
  }
  write_manifest(out / "train_split.txt", train);
  write_manifest(out / "valid_split.txt", valid);

  const std::size_t classes = train_ds.class_names.size();
  if (cfg.classes != 0 && cfg.classes != classes) {
    throw std::runtime_error("config expects " + std::to_string(cfg.classes) + " classes, dataset has " +
                             std::to_string(classes));
  }
  cfg.classes = classes;
  const std::size_t in_channels = train.front().image.dim(0);
  log << "training on " << train.size() << " images, validating on " << valid.size() << ", "
      << classes << " classes\n";

  Trainer<T> tr(cfg, classes, in_channels);
  std::ofstream elog;
  if (log_erasing) {
    elog.open(out / "erasing_log.csv");
    if (!elog) throw std::runtime_error("cannot write erasing log");
    elog << "epoch,batch,sample_id,t,psi,gamma,h_t,h_0,argmax,label,trusted\n";
    tr.set_erasing_log([&elog](std::size_t e, std::size_t b, const std::vector<std::string>& ids,
                               const std::vector<StepRecord>& recs) {
      char buf[256];
      for (const auto& r : recs) {
        std::snprintf(buf, sizeof buf, "%zu,%zu,%s,%zu,%.9g,%.9g,%.9g,%.9g,%zu,%zu,%d\n", e, b,
                      ids[r.sample].c_str(), r.t, r.psi, r.gamma, r.h_t, r.h_0, r.argmax, r.label,
                      r.trusted ? 1 : 0);
        elog << buf;
      }
    });
  }
  const auto fit = tr.fit(train, valid, &log);

  auto ck_config = cfg.to_key_values();
  ck_config["in_channels"] = std::to_string(in_channels);
  ck_config["class_names"] = join(train_ds.class_names, ',');
  ck_config["best_epoch"] = std::to_string(fit.best_epoch);
  const fs::path ckpt = out / "best.ckpt";
  write_checkpoint(ckpt, make_checkpoint(tr.model(), ck_config));

  std::ostringstream csv;
  csv << "epoch,lr,l_pos,l_neg,l_sec,total,train_error,valid_error,valid_loss,localizer_forwards,"
         "max_forwards_per_sample\n";
  nlohmann::json epochs = nlohmann::json::array();
  std::size_t max_fwd = 0;
  for (const auto& e : fit.epochs) {
    char buf[512];
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.9g,%.9g,%.6f,%.6f,%.9g,%zu,%zu\n", e.epoch, e.lr,
                  e.train.l_pos, e.train.l_neg, e.train.l_sec, e.train.total, e.train_error,
                  e.valid_error, e.valid_loss, e.localizer_forwards, e.max_forwards_per_sample);
    csv << buf;
    max_fwd = std::max(max_fwd, e.max_forwards_per_sample);
    epochs.push_back({{"epoch", e.epoch},
                      {"lr", e.lr},
                      {"l_pos", e.train.l_pos},
                      {"l_neg", e.train.l_neg},
                      {"l_sec", e.train.l_sec},
                      {"total", e.train.total},
                      {"train_error", e.train_error},
                      {"valid_error", e.valid_error},
                      {"valid_loss", e.valid_loss},
                      {"localizer_forwards", e.localizer_forwards},
                      {"max_forwards_per_sample", e.max_forwards_per_sample},
                      {"seconds", e.seconds}});
  }
  write_text(out / "epochs.csv", csv.str());

  auto ids = [](const std::vector<SampleRecord>& v) {
    std::vector<std::string> s;
    for (const auto& r : v) s.push_back(r.id);
    return s;
  };
  nlohmann::json manifest = {
      {"config", cfg.to_key_values()},
      {"seed", cfg.seed},
      {"dataset", {{"root", fs::absolute(data).string()}, {"content_hash", content_hash(data)}}},
      {"splits",
       {{"train", {{"file", "train_split.txt"}, {"ids", ids(train)}}},
        {"valid", {{"file", "valid_split.txt"}, {"ids", ids(valid)}}}}},
      {"class_names", train_ds.class_names},
      {"epochs", epochs},
      {"best_epoch", fit.best_epoch},
      {"stopped_early", fit.stopped_early},
      {"max_localizer_forwards_per_sample_per_step", max_fwd},
      {"checkpoints", {{"best", ckpt.string()}}},
  };
  write_text(out / "manifest.json", manifest.dump(2) + "\n");
  log << "best epoch " << fit.best_epoch << ", checkpoint " << ckpt.string() << "\n";
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

template <typename T>
void eval_impl(const Checkpoint& ck, const ModelInfo& info, const fs::path& data, const fs::path& out,
               std::ostream& log) {
  const fs::path root = fs::is_directory(data / "test") ? data / "test" : data;
  const auto ds = load_folder(root, find_masks(data), {info.config.height, info.config.width});
  if (ds.class_names.size() != info.classes) {
    throw std::runtime_error("dataset has " + std::to_string(ds.class_names.size()) +
                             " classes, checkpoint was trained with " + std::to_string(info.classes));
  }
  auto tr = restore<T>(ck, info);
  const auto pred = tr.predict(ds.records);
  if (pred.localizer_forwards != ds.records.size()) {
    throw std::logic_error("evaluation ran more than one localizer forward per image");
  }

  std::vector<std::string> ids;
  std::vector<std::size_t> labels;
  std::vector<Tensor<std::uint8_t>> gts;
  for (const auto& r : ds.records) {
    ids.push_back(r.id);
    labels.push_back(r.label);
    gts.push_back(r.gt_mask ? *r.gt_mask : Tensor<std::uint8_t>{});
  }
  const auto rep = evaluate(ids, labels, pred.labels, pred.masks, gts);

  fs::create_directories(out);
  write_metrics_csv(out / "metrics.csv", rep);
  KeyValues summary{{"samples", std::to_string(ids.size())},
                    {"classification_error", fmt(rep.classification_error)},
                    {"localizer_forwards", std::to_string(pred.localizer_forwards)},
                    {"skipped_files", std::to_string(ds.skipped)},
                    {"pixel_metrics", rep.has_pixel ? "present" : "absent"}};
  if (rep.has_pixel) {
    const auto ones = all_ones_baseline(gts);
    summary["f1_plus"] = fmt(rep.f1_plus);
    summary["f1_minus"] = fmt(rep.f1_minus);
    summary["all_ones_f1_plus"] = fmt(ones.plus);
    summary["all_ones_f1_minus"] = fmt(ones.minus);
    summary["pr_fg_images"] = std::to_string(rep.pr_fg.used);
    summary["pr_fg_skipped"] = std::to_string(rep.pr_fg.skipped);
    summary["pr_bg_images"] = std::to_string(rep.pr_bg.used);
    summary["pr_bg_skipped"] = std::to_string(rep.pr_bg.skipped);
    write_pr_csv(out / "pr_fg.csv", rep.pr_fg);
    if (rep.pr_bg.used > 0) write_pr_csv(out / "pr_bg.csv", rep.pr_bg);
  }
  write_text(out / "summary.txt", format_key_values(summary));
  log << format_key_values(summary);
}

template <typename T>
void predict_impl(const Checkpoint& ck, const ModelInfo& info, const fs::path& out,
                  const std::vector<fs::path>& images, std::ostream& log) {
  const LoadOptions lo{info.config.height, info.config.width};
  std::vector<SampleRecord> recs;
  for (const auto& p : images) {
    auto img = read_image(p, lo);
    if (!img) {
      log << "warning: skipping unreadable image " << p.string() << "\n";
      continue;
    }
    if (img->dim(0) != info.in_channels) {
      log << "warning: skipping " << p.string() << " (channel mismatch)\n";
      continue;
    }
    SampleRecord r;
    r.image = std::move(*img);
    r.id = p.stem().string();
    recs.push_back(std::move(r));
  }
  if (recs.empty()) throw std::runtime_error("predict: no readable images");
  auto tr = restore<T>(ck, info);
  const auto pred = tr.predict(recs);

  fs::create_directories(out);
  std::ostringstream csv;
  csv << "id,pred,class,probability\n";
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const auto& m = pred.masks[i];
    Tensor<std::uint8_t> soft(m.shape), bin(m.shape);
    for (std::size_t p = 0; p < m.size(); ++p) {
      soft.data[p] = static_cast<std::uint8_t>(std::lround(std::clamp(m.data[p], 0.0, 1.0) * 255.0));
      bin.data[p] = soft.data[p] >= 128 ? 255 : 0;
    }
    write_gray_png(out / (recs[i].id + "_mask.png"), soft);
    write_gray_png(out / (recs[i].id + "_bin.png"), bin);
    const std::size_t y = pred.labels[i];
    csv << recs[i].id << ',' << y << ',' << info.class_names[y] << ',' << fmt(pred.probs[i][y]) << '\n';
  }
  write_text(out / "labels.csv", csv.str());
  log << "wrote " << recs.size() << " predictions to " << out.string() << "\n";
}

}  // namespace

void cmd_synth(const fs::path& spec_path, const fs::path& out, std::ostream& log) {
  const auto spec = SynthSpec::from_key_values(read_key_values(spec_path));
  const auto ds = gen_synthetic(spec, spec.n_train, spec.n_valid, spec.n_test);
  fs::create_directories(out);
  write_split(out, "train", ds.train, ds.class_names);
  write_split(out, "valid", ds.valid, ds.class_names);
  write_split(out, "test", ds.test, ds.class_names);
  write_manifest(out / "train.txt", ds.train);
  write_manifest(out / "valid.txt", ds.valid);
  write_manifest(out / "test.txt", ds.test);
  write_text(out / "classes.txt", join(ds.class_names, '\n') + "\n");
  write_text(out / "spec.txt", format_key_values(spec.to_key_values()));
  log << "wrote " << ds.train.size() << "/" << ds.valid.size() << "/" << ds.test.size()
      << " images to " << out.string() << ", content hash " << content_hash(out) << "\n";
}

void cmd_train(const fs::path& config, bool log_erasing, std::ostream& log) {
  const auto cfg = HyperConfig::load(config);
  if (cfg.precision == "double") {
    train_impl<double>(cfg, log_erasing, log);
  } else {
    train_impl<float>(cfg, log_erasing, log);
  }
}

void cmd_eval(const fs::path& ckpt, const fs::path& data, const fs::path& out, std::ostream& log) {
  const auto ck = read_checkpoint(ckpt);
  const auto info = model_info(ck);
  if (info.config.precision == "double") {
    eval_impl<double>(ck, info, data, out, log);
  } else {
    eval_impl<float>(ck, info, data, out, log);
  }
}

void cmd_predict(const fs::path& ckpt, const fs::path& out, const std::vector<fs::path>& images,
                 std::ostream& log) {
  const auto ck = read_checkpoint(ckpt);
  const auto info = model_info(ck);
  if (info.config.precision == "double") {
    predict_impl<double>(ck, info, out, images, log);
  } else {
    predict_impl<float>(ck, info, out, images, log);
  }
}

}  // namespace wsl
