#include "odenet/model.hpp"

#include <fstream>
#include <random>
#include <sstream>

#include "json.hpp"
#include "odenet/errors.hpp"

namespace odenet {

namespace {

using nlohmann::json;

void copy_into(Matrix& m, std::span<const double> src, std::size_t& offset) {
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = src[offset + i];
  offset += m.size();
}

void append(std::vector<double>& out, const Matrix& m) {
  out.insert(out.end(), m.values().begin(), m.values().end());
}

void glorot(Matrix& w, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = u(rng);
}

class AffineTape : public TapeModel {
 public:
  AffineTape(Tape& tape, const AffineModel& m, bool trainable) {
    Matrix b(1, m.dim());
    for (std::size_t i = 0; i < m.dim(); ++i) b[i] = m.bias()[i];
    params_ = {trainable ? tape.leaf(m.weight()) : tape.constant(m.weight()),
               trainable ? tape.leaf(std::move(b)) : tape.constant(std::move(b))};
  }

  Eval forward(Tape& tape, Var x, bool) const override {
    return Eval{tape.add_row(tape.matmul_nt(x, params_[0]), params_[1]), {}};
  }
  Var jvp(Tape& tape, const Eval&, Var u) const override { return tape.matmul_nt(u, params_[0]); }
  const std::vector<Var>& params() const override { return params_; }

 private:
  std::vector<Var> params_;
};

class MlpTape : public TapeModel {
 public:
  MlpTape(Tape& tape, const MlpModel& m, bool trainable) {
    for (const Matrix* p : {&m.w1(), &m.b1(), &m.w2(), &m.b2(), &m.w3(), &m.b3()})
      params_.push_back(trainable ? tape.leaf(*p) : tape.constant(*p));
  }

  // cache = {1 − a₁², 1 − a₂²}
  Eval forward(Tape& tape, Var x, bool for_jvp) const override {
    Var a1 = tape.tanh(tape.add_row(tape.matmul_nt(x, params_[0]), params_[1]));
    Var a2 = tape.tanh(tape.add_row(tape.matmul_nt(a1, params_[2]), params_[3]));
    Eval e{tape.add_row(tape.matmul_nt(a2, params_[4]), params_[5]), {}};
    if (for_jvp) e.cache = {tape.one_minus_square(a1), tape.one_minus_square(a2)};
    return e;
  }

  Var jvp(Tape& tape, const Eval& at, Var u) const override {
    if (at.cache.size() != 2) throw ContractError("MLP jvp: forward pass was not prepared for derivatives");
    Var t1 = tape.mul(tape.matmul_nt(u, params_[0]), at.cache[0]);
    Var t2 = tape.mul(tape.matmul_nt(t1, params_[2]), at.cache[1]);
    return tape.matmul_nt(t2, params_[4]);
  }

  const std::vector<Var>& params() const override { return params_; }

 private:
  std::vector<Var> params_;
};

}  // namespace

std::string to_string(ModelKind kind) { return kind == ModelKind::affine ? "affine" : "mlp"; }

ModelKind parse_model_kind(const std::string& name) {
  if (name == "affine") return ModelKind::affine;
  if (name == "mlp") return ModelKind::mlp;
  throw ConfigError("unknown model kind '" + name + "' (expected affine or mlp)");
}

std::vector<double> TapeModel::flat_gradient(const Gradients& grads) const {
  std::vector<double> out;
  for (Var p : params()) append(out, grads.wrt(p));
  return out;
}

AffineModel::AffineModel(std::size_t dim) : w_(dim, dim), b_(dim, 0.0) {
  if (dim == 0) throw ConfigError("affine model: dimension must be positive");
}

AffineModel::AffineModel(Matrix w, std::vector<double> b) : w_(std::move(w)), b_(std::move(b)) {
  if (w_.rows() != w_.cols() || w_.rows() != b_.size() || b_.empty())
    throw ContractError("affine model: W must be D×D and b length D");
}

std::vector<double> AffineModel::params_flat() const {
  std::vector<double> out;
  append(out, w_);
  out.insert(out.end(), b_.begin(), b_.end());
  return out;
}

void AffineModel::load_flat(std::span<const double> theta) {
  if (theta.size() != param_count())
    throw ContractError("affine model: expected " + std::to_string(param_count()) + " parameters, got " +
                        std::to_string(theta.size()));
  std::size_t offset = 0;
  copy_into(w_, theta, offset);
  for (std::size_t i = 0; i < b_.size(); ++i) b_[i] = theta[offset + i];
}

std::unique_ptr<TapeModel> AffineModel::bind(Tape& tape, bool trainable) const {
  return std::make_unique<AffineTape>(tape, *this, trainable);
}

MlpModel::MlpModel(std::size_t dim, std::size_t hidden)
    : dim_(dim),
      hidden_(hidden),
      w1_(hidden, dim),
      b1_(1, hidden),
      w2_(hidden, hidden),
      b2_(1, hidden),
      w3_(dim, hidden),
      b3_(1, dim) {
  if (dim == 0) throw ConfigError("mlp model: dimension must be positive");
  if (hidden == 0) throw ConfigError("mlp model: hidden width must be positive");
}

std::size_t MlpModel::param_count() const {
  return w1_.size() + b1_.size() + w2_.size() + b2_.size() + w3_.size() + b3_.size();
}

std::vector<double> MlpModel::params_flat() const {
  std::vector<double> out;
  out.reserve(param_count());
  for (const Matrix* p : {&w1_, &b1_, &w2_, &b2_, &w3_, &b3_}) append(out, *p);
  return out;
}

void MlpModel::load_flat(std::span<const double> theta) {
  if (theta.size() != param_count())
    throw ContractError("mlp model: expected " + std::to_string(param_count()) + " parameters, got " +
                        std::to_string(theta.size()));
  std::size_t offset = 0;
  for (Matrix* p : {&w1_, &b1_, &w2_, &b2_, &w3_, &b3_}) copy_into(*p, theta, offset);
}

std::unique_ptr<TapeModel> MlpModel::bind(Tape& tape, bool trainable) const {
  return std::make_unique<MlpTape>(tape, *this, trainable);
}

std::unique_ptr<ParamModel> init_params(ModelKind kind, std::size_t dim, std::size_t hidden, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::unique_ptr<ParamModel> model;
  if (kind == ModelKind::affine) {
    auto m = std::make_unique<AffineModel>(dim);
    Matrix w(dim, dim);
    glorot(w, rng);
    std::vector<double> theta(w.values().begin(), w.values().end());
    theta.resize(dim * dim + dim, 0.0);
    m->load_flat(theta);
    model = std::move(m);
  } else {
    auto m = std::make_unique<MlpModel>(dim, hidden);
    Matrix w1(hidden, dim), w2(hidden, hidden), w3(dim, hidden);
    glorot(w1, rng);
    glorot(w2, rng);
    glorot(w3, rng);
    std::vector<double> theta;
    theta.reserve(m->param_count());
    append(theta, w1);
    theta.resize(theta.size() + hidden, 0.0);
    append(theta, w2);
    theta.resize(theta.size() + hidden, 0.0);
    append(theta, w3);
    theta.resize(theta.size() + dim, 0.0);
    m->load_flat(theta);
    model = std::move(m);
  }
  model->set_seed(seed);
  return model;
}

std::string checkpoint_json(const ParamModel& model) {
  json j;
  j["kind"] = to_string(model.kind());
  j["D"] = model.dim();
  j["H"] = model.hidden();
  j["seed"] = model.seed();
  j["params"] = model.params_flat();
  return j.dump();
}

std::unique_ptr<ParamModel> model_from_checkpoint_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("checkpoint: ") + e.what());
  }
  for (const char* key : {"kind", "D", "H", "seed", "params"})
    if (!j.contains(key)) throw ConfigError(std::string("checkpoint: missing key '") + key + "'");
  try {
    const ModelKind kind = parse_model_kind(j.at("kind").get<std::string>());
    const auto dim = j.at("D").get<std::size_t>();
    const auto hidden = j.at("H").get<std::size_t>();
    const auto theta = j.at("params").get<std::vector<double>>();
    std::unique_ptr<ParamModel> model;
    if (kind == ModelKind::affine)
      model = std::make_unique<AffineModel>(dim);
    else
      model = std::make_unique<MlpModel>(dim, hidden);
    if (theta.size() != model->param_count())
      throw ConfigError("checkpoint: parameter count " + std::to_string(theta.size()) + " does not match " +
                        std::to_string(model->param_count()));
    model->load_flat(theta);
    model->set_seed(j.at("seed").get<std::uint64_t>());
    return model;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const ParamModel& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write checkpoint '" + path + "'");
  out << checkpoint_json(model) << '\n';
}

std::unique_ptr<ParamModel> load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read checkpoint '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return model_from_checkpoint_json(ss.str());
}

}  // namespace odenet
