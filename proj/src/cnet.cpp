#include "ldmrec/cnet.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "ldmrec/diffusion.hpp"
#include "ldmrec/errors.hpp"

namespace ldmrec {

using json = nlohmann::json;

// ------------------------------------------------------------------ config

void CNetConfig::validate() const {
  if (num_users == 0 || num_items == 0) throw ConfigError("cnet: num_users and num_items must be positive");
  if (d == 0 || d_svd == 0 || d_pg_hidden == 0) throw ConfigError("cnet: d, d_svd and d_pg_hidden must be positive");
  if (d_forward == 0 || d_forward % 2 != 0) throw ConfigError("cnet: d_forward must be even and positive");
  if (!disable_pg && (visual_dim == 0 || text_dim == 0)) throw ConfigError("cnet: modality dims must be positive");
  if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) throw ConfigError("cnet: leaky_slope must be in [0, 1)");
}

void to_json(json& j, const CNetConfig& c) {
  j = json{{"num_users", c.num_users},   {"num_items", c.num_items},     {"visual_dim", c.visual_dim},
           {"text_dim", c.text_dim},     {"d", c.d},                     {"d_forward", c.d_forward},
           {"d_svd", c.d_svd},           {"d_pg_hidden", c.d_pg_hidden}, {"leaky_slope", c.leaky_slope},
           {"disable_cg", c.disable_cg}, {"disable_pg", c.disable_pg},   {"text_first", c.text_first}};
}

void from_json(const json& j, CNetConfig& c) {
  j.at("num_users").get_to(c.num_users);
  j.at("num_items").get_to(c.num_items);
  j.at("visual_dim").get_to(c.visual_dim);
  j.at("text_dim").get_to(c.text_dim);
  j.at("d").get_to(c.d);
  j.at("d_forward").get_to(c.d_forward);
  j.at("d_svd").get_to(c.d_svd);
  j.at("d_pg_hidden").get_to(c.d_pg_hidden);
  j.at("leaky_slope").get_to(c.leaky_slope);
  j.at("disable_cg").get_to(c.disable_cg);
  j.at("disable_pg").get_to(c.disable_pg);
  j.at("text_first").get_to(c.text_first);
}

// ------------------------------------------------------------------ layers

namespace layers {

namespace {

Var p(Var like, std::string_view prefix, const char* name) {
  return like.tape()->param(std::string(prefix) + "." + name);
}

}  // namespace

Var fc_in(Var x, Var weight, Var bias) { return ag::tanh(ag::linear(x, weight, bias)); }

CgOutput cg_block(Var h, Var z, Var c, std::string_view prefix) {
  CgOutput o;
  o.hidden = ag::tanh(ag::linear(ag::concat_cols(h, z), p(h, prefix, "W1"), p(h, prefix, "b1")));
  o.collab = ag::tanh(ag::linear(c, p(h, prefix, "W2"), p(h, prefix, "b2")));
  o.gate = ag::sigmoid(ag::linear(z, p(h, prefix, "W3"), p(h, prefix, "b3")));
  // h' (1 - g) + c' g
  o.out = ag::add(ag::mul(o.hidden, ag::affine(o.gate, -1.0, 1.0)), ag::mul(o.collab, o.gate));
  return o;
}

Var pg_block(Var h, Var m, std::string_view prefix) {
  const std::string pre(prefix);
  auto mlp = [&](const std::string& which) {
    auto hidden = ag::tanh(ag::linear(m, p(h, pre + "." + which, "W1"), p(h, pre + "." + which, "b1")));
    return ag::linear(hidden, p(h, pre + "." + which, "W2"), p(h, pre + "." + which, "b2"));
  };
  return ag::add(ag::mul(mlp("scale"), h), mlp("shift"));
}

}  // namespace layers

// -------------------------------------------------------------------- CNet

CNet::CNet(CNetConfig config, ParamSet params) : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
}

CNet::CNet(const CNet& other)
    : config_(other.config_), params_(other.params_), evaluations_(other.evaluations_.load()) {}

CNet& CNet::operator=(const CNet& other) {
  if (this != &other) {
    config_ = other.config_;
    params_ = other.params_;
    evaluations_.store(other.evaluations_.load());
  }
  return *this;
}

CNet CNet::init(const CNetConfig& c, std::uint64_t seed) {
  c.validate();
  Rng rng(seed);
  ParamSet ps;
  auto weight = [&](const std::string& name, std::size_t out, std::size_t in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> u(-bound, bound);
    DenseMatrix w(out, in);
    for (auto& x : w.values()) x = u(rng);
    ps.add(name, std::move(w));
  };
  auto bias = [&](const std::string& name, std::size_t n) { ps.add(name, DenseMatrix(1, n)); };

  weight("fc_in.W", c.d, c.num_items);
  bias("fc_in.b", c.d);
  if (!c.disable_cg) {
    for (const char* blk : {"cg1", "cg2"}) {
      const std::string b(blk);
      weight(b + ".W1", c.d, c.d + c.d_forward);
      bias(b + ".b1", c.d);
      weight(b + ".W2", c.d, 2 * c.d_svd);
      bias(b + ".b2", c.d);
      weight(b + ".W3", c.d, c.d_forward);
      bias(b + ".b3", c.d);
    }
  }
  if (!c.disable_pg) {
    for (const auto& [blk, dim] : {std::pair<const char*, std::size_t>{"pg_text", c.text_dim}, {"pg_visual", c.visual_dim}}) {
      for (const char* which : {"scale", "shift"}) {
        const std::string b = std::string(blk) + "." + which;
        weight(b + ".W1", c.d_pg_hidden, dim);
        bias(b + ".b1", c.d_pg_hidden);
        weight(b + ".W2", c.d, c.d_pg_hidden);
        bias(b + ".b2", c.d);
      }
    }
  }
  weight("fc_out.W", c.num_items, c.d);
  bias("fc_out.b", c.num_items);
  ps.add("z_in", DenseMatrix(c.num_users, c.d_forward));
  return CNet(c, std::move(ps));
}

DenseMatrix CNet::sinusoid_embeddings(StepList steps) const {
  DenseMatrix z(steps.size(), config_.d_forward);
  for (std::size_t r = 0; r < steps.size(); ++r) {
    if (steps[r].has_value()) step_embedding_into(*steps[r], z.row(r));
  }
  return z;
}

namespace {

DenseMatrix gather_signal(const DenseMatrix& table, std::span<const std::size_t> users, const char* what) {
  DenseMatrix out(users.size(), table.cols());
  for (std::size_t r = 0; r < users.size(); ++r) {
    if (users[r] >= table.rows()) throw IndexError(std::string("cnet: no ") + what + " signal for user " + std::to_string(users[r]));
    auto src = table.row(users[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

}  // namespace

Var CNet::forward(Tape& tape, const DenseMatrix& x, std::span<const std::size_t> users, StepList steps,
                  const ConditionSignals& cond) const {
  const auto& c = config_;
  if (x.cols() != c.num_items) throw DimensionError("cnet: input width must equal num_items");
  if (x.rows() != users.size() || steps.size() != users.size()) throw DimensionError("cnet: batch size mismatch");
  for (auto u : users) {
    if (u >= c.num_users) throw IndexError("cnet: unknown user index " + std::to_string(u));
  }
  evaluations_.fetch_add(users.size());

  Var h = layers::fc_in(tape.constant(x), tape.param("fc_in.W"), tape.param("fc_in.b"));

  Var z, cu;
  if (!c.disable_cg) {
    if (cond.collaborative.cols() != 2 * c.d_svd) throw DimensionError("cnet: collaborative signal width must be 2*d_svd");
    z = ag::add(tape.constant(sinusoid_embeddings(steps)), ag::gather_rows(tape.param("z_in"), users));
    cu = tape.constant(gather_signal(cond.collaborative, users, "collaborative"));
    h = ag::tanh(layers::cg_block(h, z, cu, "cg1").out);
  }
  if (!c.disable_pg) {
    if (cond.textual.cols() != c.text_dim || cond.visual.cols() != c.visual_dim) {
      throw DimensionError("cnet: modality signal width does not match config");
    }
    Var mt = tape.constant(gather_signal(cond.textual, users, "textual"));
    Var mv = tape.constant(gather_signal(cond.visual, users, "visual"));
    Var first_m = c.text_first ? mt : mv;
    Var second_m = c.text_first ? mv : mt;
    h = layers::pg_block(h, first_m, c.text_first ? "pg_text" : "pg_visual");
    h = ag::leaky_relu(h, c.leaky_slope);
    h = layers::pg_block(h, second_m, c.text_first ? "pg_visual" : "pg_text");
    h = ag::tanh(h);
  }
  if (!c.disable_cg) h = layers::cg_block(h, z, cu, "cg2").out;
  return ag::linear(h, tape.param("fc_out.W"), tape.param("fc_out.b"));
}

DenseMatrix CNet::predict(const DenseMatrix& x, std::span<const std::size_t> users, StepList steps,
                          const ConditionSignals& cond) const {
  Tape tape(&params_, false);
  return forward(tape, x, users, steps, cond).value();
}

// -------------------------------------------------------------- checkpoint

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

struct Fnv1a {
  std::uint64_t h = 0xcbf29ce484222325ull;
  void update(const void* data, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ull;
    }
  }
};

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw DataError("checkpoint truncated: " + path.string());
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const CNet& net) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  // Write to a sibling and rename so an interrupted save never clobbers the
  // previous checkpoint.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint " + tmp.string());
    out.write("LDMR", 4);
    const std::string cfg = json(net.config()).dump();
    put<std::uint64_t>(out, cfg.size());
    out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
    const ParamSet& ps = net.params();
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ps.size()));
    Fnv1a sum;
    for (std::size_t i = 0; i < ps.size(); ++i) {
      const std::string& name = ps.name(i);
      put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      const DenseMatrix& m = ps.value(i);
      out.write("FMX8", 4);
      put<std::uint32_t>(out, static_cast<std::uint32_t>(m.rows()));
      put<std::uint32_t>(out, static_cast<std::uint32_t>(m.cols()));
      const auto bytes = m.size() * sizeof(double);
      out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(bytes));
      sum.update(m.data(), bytes);
    }
    put<std::uint64_t>(out, sum.h);
    if (!out) throw DataError("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

CNet load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("missing checkpoint " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "LDMR", 4) != 0) throw DataError("not a checkpoint: " + path.string());
  const auto cfg_len = get<std::uint64_t>(in, path);
  if (cfg_len > (1u << 20)) throw DataError("checkpoint config block too large");
  std::string cfg(cfg_len, '\0');
  in.read(cfg.data(), static_cast<std::streamsize>(cfg_len));
  CNetConfig config;
  try {
    config = json::parse(cfg).get<CNetConfig>();
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint config: ") + e.what());
  }
  const auto count = get<std::uint32_t>(in, path);
  ParamSet ps;
  Fnv1a sum;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = get<std::uint32_t>(in, path);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    char block[4];
    in.read(block, 4);
    if (!in || std::memcmp(block, "FMX8", 4) != 0) throw DataError("checkpoint: bad tensor block for " + name);
    const auto rows = get<std::uint32_t>(in, path);
    const auto cols = get<std::uint32_t>(in, path);
    DenseMatrix m(rows, cols);
    const auto bytes = m.size() * sizeof(double);
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(bytes));
    if (!in) throw DataError("checkpoint truncated in tensor " + name);
    sum.update(m.data(), bytes);
    ps.add(std::move(name), std::move(m));
  }
  if (get<std::uint64_t>(in, path) != sum.h) throw DataError("checkpoint checksum mismatch: " + path.string());

  // Shapes must agree with what the config would build.
  CNet reference = CNet::init(config, 0);
  if (reference.params().size() != ps.size()) throw DataError("checkpoint: tensor count does not match config");
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (ps.name(i) != reference.params().name(i) || !ps.value(i).same_shape(reference.params().value(i))) {
      throw DataError("checkpoint: tensor " + ps.name(i) + " does not match config");
    }
  }
  return CNet(config, std::move(ps));
}

}  // namespace ldmrec
