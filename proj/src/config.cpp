#include "cgsa/config.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace cgsa {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("config: key '" + key +
                              "' expects true/false, got '" + v + "'");
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return d;
  } catch (...) {
    throw std::invalid_argument("config: key '" + key +
                                "' expects a number, got '" + v + "'");
  }
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    unsigned long long u = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return u;
  } catch (...) {
    throw std::invalid_argument("config: key '" + key +
                                "' expects a nonnegative integer, got '" + v +
                                "'");
  }
}

int parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    int i = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return i;
  } catch (...) {
    throw std::invalid_argument("config: key '" + key +
                                "' expects an integer, got '" + v + "'");
  }
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void apply_config_kv(RunConfig& c, const std::string& key,
                     const std::string& value) {
  if (key == "seed") c.seed = parse_u64(key, value);
  else if (key == "out_dir") c.out_dir = value;
  else if (key == "data_dir") c.data_dir = value;
  else if (key == "init_checkpoint") c.init_checkpoint = value;
  else if (key == "resume") c.resume = value;
  else if (key == "dim") c.dim = parse_u64(key, value);
  else if (key == "patch") c.patch = parse_u64(key, value);
  else if (key == "n") c.n = parse_u64(key, value);
  else if (key == "depth") c.depth = parse_int(key, value);
  else if (key == "iters") c.iters = parse_int(key, value);
  else if (key == "m_queries") c.m_queries = parse_u64(key, value);
  else if (key == "use_hsa") c.use_hsa = parse_bool(key, value);
  else if (key == "learn_slot_init") c.learn_slot_init = parse_bool(key, value);
  else if (key == "slot_softmax_axis") c.slot_softmax_axis = value;
  else if (key == "single_class") c.single_class = parse_bool(key, value);
  else if (key == "train_scenes") c.train_scenes = parse_u64(key, value);
  else if (key == "eval_scenes") c.eval_scenes = parse_u64(key, value);
  else if (key == "fog_alpha") c.fog_alpha = parse_double(key, value);
  else if (key == "noise_sigma") c.noise_sigma = parse_double(key, value);
  else if (key == "hue_jitter_deg") c.hue_jitter_deg = parse_double(key, value);
  else if (key == "lr") c.lr = parse_double(key, value);
  else if (key == "hsa_lr_scale") c.hsa_lr_scale = parse_double(key, value);
  else if (key == "batch_size") c.batch_size = parse_u64(key, value);
  else if (key == "pretrain_steps") c.pretrain_steps = parse_u64(key, value);
  else if (key == "adapt_steps") c.adapt_steps = parse_u64(key, value);
  else if (key == "burn_in") c.burn_in = parse_u64(key, value);
  else if (key == "lambda_rec") c.lambda_rec = parse_double(key, value);
  else if (key == "lambda_con") c.lambda_con = parse_double(key, value);
  else if (key == "lambda_l1") c.lambda_l1 = parse_double(key, value);
  else if (key == "lambda_giou") c.lambda_giou = parse_double(key, value);
  else if (key == "tau_con") c.tau_con = parse_double(key, value);
  else if (key == "proto_beta") c.proto_beta = parse_double(key, value);
  else if (key == "teacher_gamma") c.teacher_gamma = parse_double(key, value);
  else if (key == "schedule") c.schedule = value;
  else if (key == "tau_max") c.tau_max = parse_double(key, value);
  else if (key == "tau_min") c.tau_min = parse_double(key, value);
  else if (key == "tau_fix") c.tau_fix = parse_double(key, value);
  else if (key == "beta_exp") c.beta_exp = parse_double(key, value);
  else if (key == "k_sig") c.k_sig = parse_double(key, value);
  else if (key == "checkpoint_interval") c.checkpoint_interval = parse_u64(key, value);
  else if (key == "eval_role") c.eval_role = value;
  else if (key == "eval_split") c.eval_split = value;
  else if (key == "eval_domain") c.eval_domain = value;
  else if (key == "ablate_grid") c.ablate_grid = value;
  else if (key == "ablate_seeds") c.ablate_seeds = parse_u64(key, value);
  else if (key == "ablate_pretrain_steps") c.ablate_pretrain_steps = parse_u64(key, value);
  else if (key == "ablate_adapt_steps") c.ablate_adapt_steps = parse_u64(key, value);
  else if (key == "ablate_train_scenes") c.ablate_train_scenes = parse_u64(key, value);
  else if (key == "ablate_eval_scenes") c.ablate_eval_scenes = parse_u64(key, value);
  else if (key == "ablate_batch_size") c.ablate_batch_size = parse_u64(key, value);
  else if (key == "ablate_jobs") c.ablate_jobs = parse_u64(key, value);
  else
    throw std::invalid_argument("config: unknown key '" + key + "'");
}

HsaConfig RunConfig::hsa_config() const {
  HsaConfig h;
  h.depth = depth;
  h.n = n;
  h.iters = iters;
  h.dim = dim;
  h.softmax_axis = slot_softmax_axis == "slots" ? AttnSoftmaxAxis::Slots
                                                : AttnSoftmaxAxis::Tokens;
  return h;
}

ThresholdSchedule RunConfig::threshold_schedule() const {
  ThresholdSchedule s;
  if (schedule == "fixed") s.kind = ScheduleKind::Fixed;
  else if (schedule == "cosine") s.kind = ScheduleKind::Cosine;
  else if (schedule == "exponential") s.kind = ScheduleKind::Exponential;
  else if (schedule == "sigmoid") s.kind = ScheduleKind::Sigmoid;
  else
    throw std::invalid_argument(
        "config: key 'schedule' must be fixed|cosine|exponential|sigmoid");
  s.tau_min = tau_min;
  s.tau_max = tau_max;
  s.total_steps = adapt_steps;
  s.beta_exp = beta_exp;
  s.k_sig = k_sig;
  s.tau_fix = tau_fix;
  return s;
}

void RunConfig::validate() const {
  auto fail = [](const std::string& key, const std::string& constraint) {
    throw std::invalid_argument("config: key '" + key + "' violates: " +
                                constraint);
  };
  if (dim == 0) fail("dim", "must be positive");
  if (patch == 0 || kImageSize % patch != 0)
    fail("patch", "must divide the 64-pixel image size");
  if (depth != 1 && depth != 2) fail("depth", "must be 1 or 2");
  if (n < 2) fail("n", "must be >= 2");
  if (iters < 1) fail("iters", "must be >= 1");
  if (m_queries < 6)
    fail("m_queries", "must be at least the maximum object count (6)");
  if (use_hsa && m_queries % fine_slots() != 0)
    fail("m_queries", "must be divisible by n^depth = " +
                          std::to_string(fine_slots()) +
                          " for slot-aware query fusion");
  if (slot_softmax_axis != "tokens" && slot_softmax_axis != "slots")
    fail("slot_softmax_axis", "must be tokens or slots");
  if (train_scenes == 0 || eval_scenes == 0)
    fail("train_scenes/eval_scenes", "must be positive");
  if (fog_alpha < 0.0 || fog_alpha > 1.0) fail("fog_alpha", "must be in [0, 1]");
  if (noise_sigma < 0.0) fail("noise_sigma", "must be >= 0");
  if (hue_jitter_deg < 0.0) fail("hue_jitter_deg", "must be >= 0");
  if (lr <= 0.0) fail("lr", "must be > 0");
  if (hsa_lr_scale <= 0.0) fail("hsa_lr_scale", "must be > 0");
  if (batch_size == 0) fail("batch_size", "must be positive");
  if (lambda_rec < 0.0) fail("lambda_rec", "must be >= 0");
  if (lambda_con < 0.0) fail("lambda_con", "must be >= 0");
  if (tau_con <= 0.0) fail("tau_con", "must be > 0");
  if (proto_beta < 0.0 || proto_beta >= 1.0) fail("proto_beta", "must be in [0, 1)");
  if (teacher_gamma < 0.0 || teacher_gamma >= 1.0)
    fail("teacher_gamma", "must be in [0, 1)");
  if (!(tau_min > 0.0 && tau_min < 1.0) || !(tau_max > 0.0 && tau_max < 1.0))
    fail("tau_min/tau_max", "must be in (0, 1)");
  if (tau_min > tau_max) fail("tau_min", "must be <= tau_max");
  if (!(tau_fix > 0.0 && tau_fix < 1.0)) fail("tau_fix", "must be in (0, 1)");
  if (beta_exp <= 0.0) fail("beta_exp", "must be > 0");
  if (eval_role != "student" && eval_role != "teacher")
    fail("eval_role", "must be student or teacher");
  if (eval_split != "eval" && eval_split != "train")
    fail("eval_split", "must be eval or train");
  if (eval_domain != "source" && eval_domain != "target")
    fail("eval_domain", "must be source or target");
  if (ablate_grid != "components" && ablate_grid != "slots" &&
      ablate_grid != "schedules" && ablate_grid != "all")
    fail("ablate_grid", "must be components|slots|schedules|all");
  if (ablate_seeds == 0) fail("ablate_seeds", "must be positive");
  if (ablate_jobs == 0) fail("ablate_jobs", "must be positive");
  threshold_schedule().validate();
}

std::string RunConfig::serialize() const {
  std::map<std::string, std::string> kv;
  kv["seed"] = std::to_string(seed);
  kv["out_dir"] = out_dir;
  kv["data_dir"] = data_dir;
  kv["init_checkpoint"] = init_checkpoint;
  kv["resume"] = resume;
  kv["dim"] = std::to_string(dim);
  kv["patch"] = std::to_string(patch);
  kv["n"] = std::to_string(n);
  kv["depth"] = std::to_string(depth);
  kv["iters"] = std::to_string(iters);
  kv["m_queries"] = std::to_string(m_queries);
  kv["use_hsa"] = use_hsa ? "true" : "false";
  kv["learn_slot_init"] = learn_slot_init ? "true" : "false";
  kv["slot_softmax_axis"] = slot_softmax_axis;
  kv["single_class"] = single_class ? "true" : "false";
  kv["train_scenes"] = std::to_string(train_scenes);
  kv["eval_scenes"] = std::to_string(eval_scenes);
  kv["fog_alpha"] = fmt_double(fog_alpha);
  kv["noise_sigma"] = fmt_double(noise_sigma);
  kv["hue_jitter_deg"] = fmt_double(hue_jitter_deg);
  kv["lr"] = fmt_double(lr);
  kv["hsa_lr_scale"] = fmt_double(hsa_lr_scale);
  kv["batch_size"] = std::to_string(batch_size);
  kv["pretrain_steps"] = std::to_string(pretrain_steps);
  kv["adapt_steps"] = std::to_string(adapt_steps);
  kv["burn_in"] = std::to_string(burn_in);
  kv["lambda_rec"] = fmt_double(lambda_rec);
  kv["lambda_con"] = fmt_double(lambda_con);
  kv["lambda_l1"] = fmt_double(lambda_l1);
  kv["lambda_giou"] = fmt_double(lambda_giou);
  kv["tau_con"] = fmt_double(tau_con);
  kv["proto_beta"] = fmt_double(proto_beta);
  kv["teacher_gamma"] = fmt_double(teacher_gamma);
  kv["schedule"] = schedule;
  kv["tau_max"] = fmt_double(tau_max);
  kv["tau_min"] = fmt_double(tau_min);
  kv["tau_fix"] = fmt_double(tau_fix);
  kv["beta_exp"] = fmt_double(beta_exp);
  kv["k_sig"] = fmt_double(k_sig);
  kv["checkpoint_interval"] = std::to_string(checkpoint_interval);
  kv["eval_role"] = eval_role;
  kv["eval_split"] = eval_split;
  kv["eval_domain"] = eval_domain;
  kv["ablate_grid"] = ablate_grid;
  kv["ablate_seeds"] = std::to_string(ablate_seeds);
  kv["ablate_pretrain_steps"] = std::to_string(ablate_pretrain_steps);
  kv["ablate_adapt_steps"] = std::to_string(ablate_adapt_steps);
  kv["ablate_train_scenes"] = std::to_string(ablate_train_scenes);
  kv["ablate_eval_scenes"] = std::to_string(ablate_eval_scenes);
  kv["ablate_batch_size"] = std::to_string(ablate_batch_size);
  kv["ablate_jobs"] = std::to_string(ablate_jobs);
  std::ostringstream os;
  for (const auto& [k, v] : kv) os << k << " = " << v << "\n";
  return os.str();
}

RunConfig parse_config(
    const std::string& file_text,
    const std::vector<std::pair<std::string, std::string>>& overrides) {
  RunConfig c;
  std::istringstream is(file_text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: malformed line " +
                                  std::to_string(line_no) +
                                  " (expected key = value): '" + line + "'");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw std::invalid_argument("config: malformed line " +
                                  std::to_string(line_no) + ": empty key");
    apply_config_kv(c, key, value);
  }
  for (const auto& [key, value] : overrides) apply_config_kv(c, key, value);
  c.validate();
  return c;
}

RunConfig load_config_file(
    const std::string& path,
    const std::vector<std::pair<std::string, std::string>>& overrides) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), overrides);
}

}  // namespace cgsa
