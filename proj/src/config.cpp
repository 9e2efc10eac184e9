#include "wslmm/config.hpp"

#include <cmath>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>

namespace wsl {

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

template <typename U>
U parse(const std::string& key, const std::string& text) {
  std::istringstream is(text);
  U v{};
  is >> v;
  if (!is || !(is >> std::ws).eof()) {
    throw std::invalid_argument("config: key '" + key + "' has invalid value '" + text + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw std::invalid_argument("config: key '" + key + "' expects a boolean, got '" + v + "'");
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  for (std::string item; std::getline(ss, item, ',');) out.push_back(parse<std::size_t>(key, item));
  return out;
}

std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

using Setter = std::function<void(HyperConfig&, const std::string&, const std::string&)>;

template <typename U, typename F>
Setter num(F field) {
  return [field](HyperConfig& c, const std::string& k, const std::string& v) { field(c) = parse<U>(k, v); };
}

template <typename F>
Setter flag(F field) {
  return [field](HyperConfig& c, const std::string& k, const std::string& v) { field(c) = parse_bool(k, v); };
}

template <typename F>
Setter text(F field) {
  return [field](HyperConfig& c, const std::string&, const std::string& v) { field(c) = v; };
}

#define F(member) [](HyperConfig& c) -> auto& { return c.member; }

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> s = {
      {"omega", num<double>(F(omega))},
      {"sigma_prime", num<double>(F(sigma_prime))},
      {"sigma", num<double>(F(sigma))},
      {"u", num<int>(F(u))},
      {"kmax", num<double>(F(kmax))},
      {"kmin", num<double>(F(kmin))},
      {"alpha", num<double>(F(alpha))},
      {"modalities", num<std::size_t>(F(modalities))},
      {"dropout", num<double>(F(dropout))},
      {"widths", [](HyperConfig& c, const std::string& k, const std::string& v) { c.widths = parse_list(k, v); }},
      {"strides", [](HyperConfig& c, const std::string& k, const std::string& v) { c.strides = parse_list(k, v); }},
      {"shared_backbone", flag(F(shared_backbone))},
      {"lr", num<double>(F(lr))},
      {"lr_decay", num<double>(F(lr_decay))},
      {"lr_step", num<std::size_t>(F(lr_step))},
      {"lr_floor", num<double>(F(lr_floor))},
      {"momentum", num<double>(F(momentum))},
      {"nesterov", flag(F(nesterov))},
      {"weight_decay", num<double>(F(weight_decay))},
      {"max_epochs", num<std::size_t>(F(max_epochs))},
      {"patience", num<std::size_t>(F(patience))},
      {"batch_size", num<std::size_t>(F(batch_size))},
      {"w_pos", num<double>(F(loss_weights.pos))},
      {"w_neg", num<double>(F(loss_weights.neg))},
      {"w_sec", num<double>(F(loss_weights.sec))},
      {"seed", num<std::uint64_t>(F(seed))},
      {"height", num<std::size_t>(F(height))},
      {"width", num<std::size_t>(F(width))},
      {"classes", num<std::size_t>(F(classes))},
      {"hflip", flag(F(hflip))},
      {"vflip", flag(F(vflip))},
      {"rot90", flag(F(rot90))},
      {"precision", text(F(precision))},
      {"data", text(F(data))},
      {"out", text(F(out))},
  };
  return s;
}

#undef F

}  // namespace

HyperConfig HyperConfig::from_key_values(const KeyValues& kv) {
  HyperConfig c;
  const auto& s = setters();
  for (const auto& [k, v] : kv) {
    const auto it = s.find(k);
    if (it == s.end()) throw std::invalid_argument("config: unknown key '" + k + "'");
    it->second(c, k, v);
  }
  c.validate();
  return c;
}

HyperConfig HyperConfig::load(const std::filesystem::path& path) {
  return from_key_values(read_key_values(path));
}

KeyValues HyperConfig::to_key_values() const {
  return {{"omega", fmt(omega)},
          {"sigma_prime", fmt(sigma_prime)},
          {"sigma", fmt(sigma)},
          {"u", std::to_string(u)},
          {"kmax", fmt(kmax)},
          {"kmin", fmt(kmin)},
          {"alpha", fmt(alpha)},
          {"modalities", std::to_string(modalities)},
          {"dropout", fmt(dropout)},
          {"widths", join(widths)},
          {"strides", join(strides)},
          {"shared_backbone", shared_backbone ? "1" : "0"},
          {"lr", fmt(lr)},
          {"lr_decay", fmt(lr_decay)},
          {"lr_step", std::to_string(lr_step)},
          {"lr_floor", fmt(lr_floor)},
          {"momentum", fmt(momentum)},
          {"nesterov", nesterov ? "1" : "0"},
          {"weight_decay", fmt(weight_decay)},
          {"max_epochs", std::to_string(max_epochs)},
          {"patience", std::to_string(patience)},
          {"batch_size", std::to_string(batch_size)},
          {"w_pos", fmt(loss_weights.pos)},
          {"w_neg", fmt(loss_weights.neg)},
          {"w_sec", fmt(loss_weights.sec)},
          {"seed", std::to_string(seed)},
          {"height", std::to_string(height)},
          {"width", std::to_string(width)},
          {"classes", std::to_string(classes)},
          {"hflip", hflip ? "1" : "0"},
          {"vflip", vflip ? "1" : "0"},
          {"rot90", rot90 ? "1" : "0"},
          {"precision", precision},
          {"data", data},
          {"out", out}};
}

void HyperConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument("config: " + what);
  };
  require(omega > 0, "omega must be > 0");
  require(std::isfinite(sigma_prime), "sigma_prime must be finite");
  require(sigma > 0, "sigma must be > 0");
  require(u >= 0, "u must be >= 0");
  require(kmax > 0 && kmax <= 1, "kmax must lie in (0,1]");
  require(kmin > 0 && kmin <= 1, "kmin must lie in (0,1]");
  require(alpha >= 0, "alpha must be >= 0");
  require(modalities > 0, "modalities must be positive");
  require(dropout >= 0 && dropout < 1, "dropout must lie in [0,1)");
  require(widths.size() >= 3, "widths needs at least 3 entries");
  require(lr > 0, "lr must be > 0");
  require(lr_decay > 0 && lr_decay <= 1, "lr_decay must lie in (0,1]");
  require(lr_step > 0, "lr_step must be positive");
  require(lr_floor >= 0, "lr_floor must be >= 0");
  require(momentum >= 0 && momentum < 1, "momentum must lie in [0,1)");
  require(weight_decay >= 0, "weight_decay must be >= 0");
  require(max_epochs > 0, "max_epochs must be positive");
  require(batch_size > 0, "batch_size must be positive");
  require(loss_weights.pos >= 0 && loss_weights.neg >= 0 && loss_weights.sec >= 0,
          "loss weights must be >= 0");
  require(strides.size() == widths.size(), "strides needs one entry per width");
  std::size_t total = 1;
  for (auto st : strides) {
    require(st == 1 || st == 2, "strides must be 1 or 2");
    total *= st;
  }
  require(height >= total && width >= total, "image size below the backbone stride");
  require(classes == 0 || classes >= 2, "classes must be 0 (auto) or >= 2");
  require(precision == "float" || precision == "double", "precision must be float or double");
}

double HyperConfig::lr_at(std::size_t epoch) const {
  const double steps = static_cast<double>(epoch / lr_step);
  return std::max(lr * std::pow(lr_decay, steps), lr_floor);
}

NetConfig HyperConfig::net(std::size_t n_classes, std::size_t in_channels) const {
  NetConfig n;
  n.in_channels = in_channels;
  n.classes = n_classes;
  n.modalities = modalities;
  n.widths = widths;
  n.strides = strides;
  n.shared_backbone = shared_backbone;
  n.kmax = kmax;
  n.kmin = kmin;
  n.alpha = alpha;
  n.dropout = dropout;
  n.validate();
  return n;
}

ErasingParams HyperConfig::erasing() const {
  ErasingParams p;
  p.u = u;
  p.sigma = sigma;
  p.omega = omega;
  p.sigma_prime = sigma_prime;
  p.loss_weight = loss_weights.sec;
  return p;
}

AugmentOps HyperConfig::augment() const { return {hflip, vflip, rot90}; }

}  // namespace wsl
