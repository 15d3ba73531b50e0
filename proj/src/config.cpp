#include "plus/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "plus/digest.hpp"

namespace plus::io {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

struct Cursor {
    std::string where;  // "file:line" for diagnostics
};

[[noreturn]] void fail(const Cursor& c, const std::string& msg) { throw ConfigError(c.where + ": " + msg); }

int to_int(const Cursor& c, const std::string& v) {
    try {
        size_t used = 0;
        int x = std::stoi(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        fail(c, "expected an integer, got '" + v + "'");
    }
}

std::uint64_t to_u64(const Cursor& c, const std::string& v) {
    try {
        size_t used = 0;
        unsigned long long x = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        fail(c, "expected an unsigned integer, got '" + v + "'");
    }
}

double to_double(const Cursor& c, const std::string& v) {
    try {
        size_t used = 0;
        double x = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        fail(c, "expected a number, got '" + v + "'");
    }
}

bool to_bool(const Cursor& c, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    fail(c, "expected a boolean, got '" + v + "'");
}

std::string fmt(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

std::string join(const std::vector<std::string>& v) {
    std::string out;
    for (size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + v[i];
    return out;
}

void apply_world(mw::WorldConfig& w, const Cursor& c, const std::string& k, const std::string& v) {
    if (k == "mode") {
        if (v == "topic")
            w.mode = mw::WorldConfig::Mode::Topic;
        else if (v == "attribute")
            w.mode = mw::WorldConfig::Mode::Attribute;
        else
            fail(c, "mode must be 'topic' or 'attribute', got '" + v + "'");
    } else if (k == "topics")
        w.topics = split_list(v);
    else if (k == "topics_ood")
        w.topics_ood = split_list(v);
    else if (k == "num_attributes")
        w.num_attributes = to_int(c, v);
    else if (k == "attr_names")
        w.attr_names = split_list(v);
    else if (k == "hint")
        w.hint = to_bool(c, v);
    else if (k == "num_fillers")
        w.num_fillers = to_int(c, v);
    else if (k == "num_questions")
        w.num_questions = to_int(c, v);
    else if (k == "min_context")
        w.min_context = to_int(c, v);
    else if (k == "max_context")
        w.max_context = to_int(c, v);
    else if (k == "noise_rate")
        w.noise_rate = to_double(c, v);
    else if (k == "n_train")
        w.n_train = to_int(c, v);
    else if (k == "n_test_seen")
        w.n_test_seen = to_int(c, v);
    else if (k == "n_test_ood")
        w.n_test_ood = to_int(c, v);
    else if (k == "users_train")
        w.users_train = to_int(c, v);
    else if (k == "users_test_seen")
        w.users_test_seen = to_int(c, v);
    else if (k == "users_test_ood")
        w.users_test_ood = to_int(c, v);
    else if (k == "seed")
        w.seed = to_u64(c, v);
    else
        fail(c, "unknown key '" + k + "' in [world]");
}

void apply_model(sm::ModelConfig& m, const Cursor& c, const std::string& k, const std::string& v) {
    if (k == "d_model")
        m.d_model = to_int(c, v);
    else if (k == "heads")
        m.heads = to_int(c, v);
    else if (k == "layers")
        m.layers = to_int(c, v);
    else if (k == "ff")
        m.ff = to_int(c, v);
    else if (k == "max_seq")
        m.max_seq = to_int(c, v);
    else if (k == "t_sum")
        m.t_sum = to_int(c, v);
    else if (k == "latent_dim")
        m.latent_dim = to_int(c, v);
    else
        fail(c, "unknown key '" + k + "' in [model]");
}

void apply_rm(rl::RmTrainConfig& r, const Cursor& c, const std::string& k, const std::string& v) {
    if (k == "epochs")
        r.epochs = to_int(c, v);
    else if (k == "batch_size")
        r.batch_size = to_int(c, v);
    else if (k == "lr")
        r.lr = to_double(c, v);
    else if (k == "entity_redraw")
        r.entity_redraw = to_bool(c, v);
    else if (k == "calibrate_epochs")
        r.calibrate_epochs = to_int(c, v);
    else
        fail(c, "unknown key '" + k + "' in [rm]");
}

void apply_ppo(rl::JointConfig& j, const Cursor& c, const std::string& k, const std::string& v) {
    if (k == "clip_eps")
        j.ppo.clip_eps = static_cast<float>(to_double(c, v));
    else if (k == "ppo_epochs")
        j.ppo.ppo_epochs = to_int(c, v);
    else if (k == "minibatch")
        j.ppo.minibatch = to_int(c, v);
    else if (k == "gamma")
        j.ppo.gamma = to_double(c, v);
    else if (k == "lambda")
        j.ppo.lambda = to_double(c, v);
    else if (k == "kl_coef")
        j.ppo.kl_coef = to_double(c, v);
    else if (k == "norm_adv")
        j.ppo.norm_adv = to_bool(c, v);
    else if (k == "temperature")
        j.ppo.sample_temperature = to_double(c, v);
    else if (k == "epochs")
        j.epochs = to_int(c, v);
    else if (k == "rollout_batch")
        j.rollout_batch = to_int(c, v);
    else if (k == "actor_lr")
        j.actor_lr = to_double(c, v);
    else if (k == "critic_lr")
        j.critic_lr = to_double(c, v);
    else if (k == "rm_lr")
        j.rm_lr = to_double(c, v);
    else if (k == "entity_redraw")
        j.entity_redraw = to_bool(c, v);
    else if (k == "redraw_warmup")
        j.redraw_warmup = to_int(c, v);
    else if (k == "calibrate_epochs")
        j.calibrate_epochs = to_int(c, v);
    else if (k == "probe_every")
        j.probe_every = to_int(c, v);
    else if (k == "divergence_patience")
        j.divergence_patience = to_int(c, v);
    else
        fail(c, "unknown key '" + k + "' in [ppo]");
}

}  // namespace

void RunConfig::finalize(int vocab_size) {
    model.vocab_size = vocab_size;
    model.validate();
    rm.model = model;
    rm.seed = world.seed;
    joint.model = model;
    joint.seed = world.seed;
    bench.rm = rm;
    bench.joint = joint;
}

std::string RunConfig::canonical_string() const {
    std::string s;
    s += "[bench]\n";
    std::string seeds;
    for (size_t i = 0; i < bench.seeds.size(); ++i) seeds += (i ? "," : "") + std::to_string(bench.seeds[i]);
    s += "seeds=" + seeds + "\n";
    s += "splits=" + join(bench.splits) + "\n";
    s += "variants=" + join(bench.variants) + "\n";
    s += "win_rate_candidates=" + std::to_string(win_rate_candidates) + "\n";
    s += "win_rate_records=" + std::to_string(win_rate_records) + "\n";
    s += "[model]\n" + model.canonical_string();
    s += "[ppo]\n";
    s += "actor_lr=" + fmt(joint.actor_lr) + "\n";
    s += "calibrate_epochs=" + std::to_string(joint.calibrate_epochs) + "\n";
    s += "clip_eps=" + fmt(joint.ppo.clip_eps) + "\n";
    s += "critic_lr=" + fmt(joint.critic_lr) + "\n";
    s += "divergence_patience=" + std::to_string(joint.divergence_patience) + "\n";
    s += "entity_redraw=" + std::string(joint.entity_redraw ? "true" : "false") + "\n";
    s += "epochs=" + std::to_string(joint.epochs) + "\n";
    s += "gamma=" + fmt(joint.ppo.gamma) + "\n";
    s += "kl_coef=" + fmt(joint.ppo.kl_coef) + "\n";
    s += "lambda=" + fmt(joint.ppo.lambda) + "\n";
    s += "minibatch=" + std::to_string(joint.ppo.minibatch) + "\n";
    s += "norm_adv=" + std::string(joint.ppo.norm_adv ? "true" : "false") + "\n";
    s += "ppo_epochs=" + std::to_string(joint.ppo.ppo_epochs) + "\n";
    s += "probe_every=" + std::to_string(joint.probe_every) + "\n";
    s += "redraw_warmup=" + std::to_string(joint.redraw_warmup) + "\n";
    s += "rm_lr=" + fmt(joint.rm_lr) + "\n";
    s += "rollout_batch=" + std::to_string(joint.rollout_batch) + "\n";
    s += "temperature=" + fmt(joint.ppo.sample_temperature) + "\n";
    s += "[rm]\n";
    s += "batch_size=" + std::to_string(rm.batch_size) + "\n";
    s += "calibrate_epochs=" + std::to_string(rm.calibrate_epochs) + "\n";
    s += "entity_redraw=" + std::string(rm.entity_redraw ? "true" : "false") + "\n";
    s += "epochs=" + std::to_string(rm.epochs) + "\n";
    s += "lr=" + fmt(rm.lr) + "\n";
    s += "[world]\n" + world.canonical_string();
    return s;
}

std::string RunConfig::digest() const { return sha256_hex(canonical_string()); }

RunConfig parse_config_text(const std::string& text, const std::string& source) {
    RunConfig cfg;
    std::istringstream ss(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        Cursor c{source + ":" + std::to_string(lineno)};
        // comments start with # or ;
        size_t hash = line.find_first_of("#;");
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') fail(c, "unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            if (section != "world" && section != "model" && section != "rm" && section != "ppo" &&
                section != "bench")
                fail(c, "unknown section [" + section + "]");
            continue;
        }
        size_t eq = line.find('=');
        if (eq == std::string::npos) fail(c, "expected key=value, got '" + line + "'");
        std::string k = trim(line.substr(0, eq));
        std::string v = trim(line.substr(eq + 1));
        if (section.empty()) fail(c, "key '" + k + "' outside any section");
        if (section == "world")
            apply_world(cfg.world, c, k, v);
        else if (section == "model")
            apply_model(cfg.model, c, k, v);
        else if (section == "rm")
            apply_rm(cfg.rm, c, k, v);
        else if (section == "ppo")
            apply_ppo(cfg.joint, c, k, v);
        else if (section == "bench") {
            if (k == "variants")
                cfg.bench.variants = split_list(v);
            else if (k == "seeds") {
                cfg.bench.seeds.clear();
                for (const auto& x : split_list(v)) cfg.bench.seeds.push_back(to_u64(c, x));
            } else if (k == "splits")
                cfg.bench.splits = split_list(v);
            else if (k == "win_rate_candidates")
                cfg.win_rate_candidates = to_int(c, v);
            else if (k == "win_rate_records")
                cfg.win_rate_records = to_int(c, v);
            else
                fail(c, "unknown key '" + k + "' in [bench]");
        }
    }
    return cfg;
}

RunConfig parse_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file " + path);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return parse_config_text(text, path);
}

}  // namespace plus::io
