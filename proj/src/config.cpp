#include "prism/config.hpp"

#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

namespace prism {

namespace {

struct Field {
  const char* name;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::int64_t parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const std::int64_t out = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' expects an integer, got '" + v + "'");
  }
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const std::uint64_t out = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' expects an unsigned integer, got '" + v + "'");
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' expects a number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: key '" + key + "' expects true/false, got '" + v + "'");
}

#define STR_FIELD(member)                                                             \
  Field{#member, [](const RunConfig& c) { return c.member; },                         \
        [](RunConfig& c, const std::string& v) { c.member = v; }}
#define INT_FIELD(member)                                                             \
  Field{#member, [](const RunConfig& c) { return std::to_string(c.member); },         \
        [](RunConfig& c, const std::string& v) { c.member = parse_int(#member, v); }}
#define UINT_FIELD(member)                                                            \
  Field{#member, [](const RunConfig& c) { return std::to_string(c.member); },         \
        [](RunConfig& c, const std::string& v) { c.member = parse_uint(#member, v); }}
#define DBL_FIELD(member)                                                             \
  Field{#member, [](const RunConfig& c) { return fmt_double(c.member); },             \
        [](RunConfig& c, const std::string& v) { c.member = parse_double(#member, v); }}
#define BOOL_FIELD(member)                                                            \
  Field{#member, [](const RunConfig& c) { return c.member ? "true" : "false"; },      \
        [](RunConfig& c, const std::string& v) { c.member = parse_bool(#member, v); }}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      STR_FIELD(env),
      STR_FIELD(variant),
      INT_FIELD(experts),
      UINT_FIELD(seed),
      INT_FIELD(total_steps),
      INT_FIELD(eval_interval),
      INT_FIELD(eval_episodes),
      INT_FIELD(seed_steps),
      INT_FIELD(episode_length),
      STR_FIELD(out_dir),
      INT_FIELD(latent_dim),
      INT_FIELD(encoder_dim),
      INT_FIELD(mlp_dim),
      INT_FIELD(task_emb_dim),
      INT_FIELD(num_bins),
      INT_FIELD(num_q),
      DBL_FIELD(q_dropout),
      INT_FIELD(simnorm_group),
      DBL_FIELD(simnorm_temp),
      BOOL_FIELD(dynamics_head),
      BOOL_FIELD(gumbel_noise),
      INT_FIELD(num_tasks),
      DBL_FIELD(tau_init),
      DBL_FIELD(tau_min),
      DBL_FIELD(tau_max),
      DBL_FIELD(tau_beta),
      DBL_FIELD(freeze_fraction),
      DBL_FIELD(target_entropy),
      INT_FIELD(batch_size),
      DBL_FIELD(lr),
      DBL_FIELD(encoder_lr),
      DBL_FIELD(grad_clip),
      INT_FIELD(horizon),
      DBL_FIELD(joint_coef),
      DBL_FIELD(reward_coef),
      DBL_FIELD(value_coef),
      DBL_FIELD(temporal_lambda),
      DBL_FIELD(alpha_lb),
      DBL_FIELD(lambda_ortho),
      DBL_FIELD(q_momentum),
      DBL_FIELD(discount),
      INT_FIELD(utd_ratio),
      INT_FIELD(buffer_capacity),
      INT_FIELD(policy_horizon),
      DBL_FIELD(entropy_coef),
      DBL_FIELD(policy_lr),
      STR_FIELD(policy_objective),
      DBL_FIELD(log_std_min),
      DBL_FIELD(log_std_max),
      INT_FIELD(plan_horizon),
      INT_FIELD(plan_iterations),
      INT_FIELD(plan_population),
      INT_FIELD(plan_elites),
      INT_FIELD(plan_prior_samples),
      DBL_FIELD(plan_std_min),
      DBL_FIELD(plan_std_max),
      DBL_FIELD(plan_temperature),
      DBL_FIELD(explore_std_init),
      DBL_FIELD(explore_std_final),
      INT_FIELD(bench_batch),
      INT_FIELD(bench_forward_iters),
      INT_FIELD(bench_plan_iters),
      INT_FIELD(bench_warmup),
  };
  return table;
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

void RunConfig::validate() const {
  if (variant != "mlp_monolithic" && variant != "moe_gs" && variant != "moe_soft_penalty" && variant != "moe_plain") {
    throw ConfigError("config: unknown variant '" + variant + "'");
  }
  if (policy_objective != "q_value" && policy_objective != "imagined_return") {
    throw ConfigError("config: unknown policy_objective '" + policy_objective + "'");
  }
  if (experts < 1) throw ConfigError("config: experts must be >= 1");
  if (latent_dim <= 0 || latent_dim % simnorm_group != 0) {
    throw ConfigError("config: latent_dim must be a positive multiple of simnorm_group");
  }
  if (plan_elites > plan_population) throw ConfigError("config: plan_elites must be <= plan_population");
  if (plan_prior_samples > plan_population) {
    throw ConfigError("config: plan_prior_samples must be <= plan_population");
  }
  if (!(plan_std_min > 0.0 && plan_std_min < plan_std_max)) {
    throw ConfigError("config: need 0 < plan_std_min < plan_std_max");
  }
  if (horizon < 1) throw ConfigError("config: horizon must be >= 1");
  if (batch_size < 1) throw ConfigError("config: batch_size must be >= 1");
  if (num_q < 2) throw ConfigError("config: num_q must be >= 2");
}

std::string RunConfig::dump() const {
  std::ostringstream os;
  for (const auto& f : fields()) os << f.name << " = " << f.get(*this) << "\n";
  return os.str();
}

void RunConfig::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw ConfigError("config: cannot write " + path);
  out << dump();
}

void RunConfig::apply_override(const std::string& key, const std::string& value) {
  for (const auto& f : fields()) {
    if (key == f.name) {
      f.set(*this, value);
      return;
    }
  }
  throw ConfigError("config: unknown key '" + key + "'");
}

RunConfig RunConfig::parse_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config: line " + std::to_string(line_no) + " is not key = value");
    }
    cfg.apply_override(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

RunConfig RunConfig::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot read " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_text(buffer.str());
}

}  // namespace prism
