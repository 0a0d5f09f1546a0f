#include "cgsa/checkpoint.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace cgsa {

namespace {

void put_double(std::ostream& os, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  os << buf;
}

[[noreturn]] void truncated(const std::string& what) {
  throw std::runtime_error("checkpoint: truncated file (while reading " +
                           what + ")");
}

std::string next_line(std::istream& in, const std::string& what) {
  std::string line;
  if (!std::getline(in, line)) truncated(what);
  return line;
}

void expect(const std::string& got, const std::string& want) {
  if (got != want)
    throw std::runtime_error("checkpoint: expected '" + want + "', got '" +
                             got + "'");
}

std::string kv_value(const std::string& line, const std::string& key) {
  const std::string prefix = key + " = ";
  if (line.rfind(prefix, 0) != 0)
    throw std::runtime_error("checkpoint: expected '" + key + " = ...', got '" +
                             line + "'");
  return line.substr(prefix.size());
}

void write_store(std::ostream& os, const std::string& role,
                 const ParameterStore& store) {
  os << "[store " << role << "]\n";
  os << "params = " << store.count() << "\n";
  for (const auto& name : store.names()) {
    const Tensor& t = store.get(name);
    os << "param " << name << " " << t.rows() << " " << t.cols() << "\n";
    for (std::size_t r = 0; r < t.rows(); ++r) {
      for (std::size_t c = 0; c < t.cols(); ++c) {
        if (c) os << " ";
        put_double(os, t.at(r, c));
      }
      os << "\n";
    }
  }
}

Tensor read_tensor_rows(std::istream& in, std::size_t rows, std::size_t cols,
                        const std::string& what) {
  Tensor t(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    std::istringstream row(next_line(in, what));
    for (std::size_t c = 0; c < cols; ++c) {
      if (!(row >> t.at(r, c)))
        throw std::runtime_error("checkpoint: malformed values for " + what);
    }
  }
  return t;
}

ParameterStore read_store(std::istream& in) {
  ParameterStore store;
  std::size_t count = std::stoull(kv_value(next_line(in, "params"), "params"));
  for (std::size_t i = 0; i < count; ++i) {
    std::istringstream head(next_line(in, "param header"));
    std::string tag, name;
    std::size_t rows, cols;
    if (!(head >> tag >> name >> rows >> cols) || tag != "param")
      throw std::runtime_error("checkpoint: malformed param header");
    store.add(name, read_tensor_rows(in, rows, cols, "param " + name));
  }
  return store;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ostringstream os;
  os << "cgsa-checkpoint " << Checkpoint::kVersion << "\n";
  os << "[config]\n" << ckpt.config_text;
  os << "[state]\n";
  os << "step = " << ckpt.step << "\n";
  os << "rng_seed = " << ckpt.rng_seed << "\n";
  os << "rng_counter = " << ckpt.rng_counter << "\n";
  os << "[prototypes]\n";
  os << "classes = " << ckpt.memory.num_classes << "\n";
  os << "dim = " << ckpt.memory.dim << "\n";
  os << "beta = ";
  put_double(os, ckpt.memory.beta);
  os << "\ntau = ";
  put_double(os, ckpt.memory.tau);
  os << "\ninitialized =";
  for (bool b : ckpt.memory.initialized) os << " " << (b ? 1 : 0);
  os << "\n";
  for (std::size_t c = 0; c < ckpt.memory.num_classes; ++c) {
    for (std::size_t j = 0; j < ckpt.memory.dim; ++j) {
      if (j) os << " ";
      put_double(os, ckpt.memory.prototypes.at(c, j));
    }
    os << "\n";
  }
  for (const auto& [role, store] : ckpt.stores) write_store(os, role, store);
  os << "end\n";

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot open " + path);
  out << os.str();
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);

  Checkpoint ckpt;
  std::istringstream header(next_line(in, "header"));
  std::string magic;
  int version = -1;
  header >> magic >> version;
  if (magic != "cgsa-checkpoint")
    throw std::runtime_error("checkpoint: not a checkpoint file: " + path);
  if (version != Checkpoint::kVersion)
    throw std::runtime_error("checkpoint: unsupported format version " +
                             std::to_string(version));

  expect(next_line(in, "[config]"), "[config]");
  std::string line = next_line(in, "config body");
  std::ostringstream cfg;
  while (line != "[state]") {
    cfg << line << "\n";
    line = next_line(in, "config body");
  }
  ckpt.config_text = cfg.str();

  ckpt.step = std::stoull(kv_value(next_line(in, "step"), "step"));
  ckpt.rng_seed = std::stoull(kv_value(next_line(in, "rng_seed"), "rng_seed"));
  ckpt.rng_counter =
      std::stoull(kv_value(next_line(in, "rng_counter"), "rng_counter"));

  expect(next_line(in, "[prototypes]"), "[prototypes]");
  std::size_t classes =
      std::stoull(kv_value(next_line(in, "classes"), "classes"));
  std::size_t dim = std::stoull(kv_value(next_line(in, "dim"), "dim"));
  double beta = std::stod(kv_value(next_line(in, "beta"), "beta"));
  double tau = std::stod(kv_value(next_line(in, "tau"), "tau"));
  ckpt.memory = PrototypeMemory::create(classes, dim, beta, tau);
  {
    std::istringstream init_line(next_line(in, "initialized"));
    std::string tag, eq;
    init_line >> tag >> eq;
    if (tag != "initialized" || eq != "=")
      throw std::runtime_error("checkpoint: malformed initialized line");
    for (std::size_t c = 0; c < classes; ++c) {
      int b;
      if (!(init_line >> b))
        throw std::runtime_error("checkpoint: malformed initialized flags");
      ckpt.memory.initialized[c] = b != 0;
    }
  }
  ckpt.memory.prototypes = read_tensor_rows(in, classes, dim, "prototypes");

  line = next_line(in, "store or end");
  while (line != "end") {
    if (line.rfind("[store ", 0) != 0 || line.back() != ']')
      throw std::runtime_error("checkpoint: expected store section, got '" +
                               line + "'");
    std::string role = line.substr(7, line.size() - 8);
    ckpt.stores[role] = read_store(in);
    line = next_line(in, "store or end");
  }
  return ckpt;
}

void require_same_layout(const ParameterStore& loaded,
                         const ParameterStore& expected,
                         const std::string& role) {
  if (!loaded.same_shapes(expected))
    throw std::runtime_error(
        "checkpoint: parameter names/shapes of store '" + role +
        "' do not match this configuration");
}

}  // namespace cgsa
