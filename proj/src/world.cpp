#include "plus/world.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "plus/digest.hpp"

using nlohmann::json;

namespace plus::mw {

namespace {

const char* mode_str(WorldConfig::Mode m) {
    return m == WorldConfig::Mode::Topic ? "topic" : "attribute";
}

std::string join(const std::vector<std::string>& v) {
    std::string out;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += v[i];
    }
    return out;
}

template <typename T>
void shuffle_vec(std::vector<T>& v, Rng& rng) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
        int j = rng.uniform_int(i + 1);
        std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(j)]);
    }
}

}  // namespace

WorldConfig WorldConfig::pets_default() {
    WorldConfig c;
    c.mode = Mode::Topic;
    c.topics = {"dog", "cat", "hamster", "fish", "horse", "turtle", "lizard", "ferret"};
    c.topics_ood = {"rabbit", "bird"};
    return c;
}

WorldConfig WorldConfig::ufp_default(int k) {
    WorldConfig c;
    c.mode = Mode::Attribute;
    c.num_attributes = k;
    c.attr_names = {"helpful", "honest", "truthful", "following"};
    c.attr_names.resize(static_cast<size_t>(k));
    c.n_train = 10000;
    c.n_test_seen = 2000;
    c.n_test_ood = 0;
    c.users_train = 2000;
    c.users_test_seen = 400;
    c.users_test_ood = 0;
    return c;
}

std::string WorldConfig::canonical_string() const {
    std::map<std::string, std::string> kv;
    kv["mode"] = mode_str(mode);
    kv["topics"] = join(topics);
    kv["topics_ood"] = join(topics_ood);
    kv["num_attributes"] = std::to_string(num_attributes);
    kv["attr_names"] = join(attr_names);
    kv["hint"] = hint ? "1" : "0";
    kv["num_fillers"] = std::to_string(num_fillers);
    kv["num_questions"] = std::to_string(num_questions);
    kv["min_context"] = std::to_string(min_context);
    kv["max_context"] = std::to_string(max_context);
    std::ostringstream nr;
    nr << noise_rate;
    kv["noise_rate"] = nr.str();
    kv["n_train"] = std::to_string(n_train);
    kv["n_test_seen"] = std::to_string(n_test_seen);
    kv["n_test_ood"] = std::to_string(n_test_ood);
    kv["users_train"] = std::to_string(users_train);
    kv["users_test_seen"] = std::to_string(users_test_seen);
    kv["users_test_ood"] = std::to_string(users_test_ood);
    kv["seed"] = std::to_string(seed);
    std::string out;
    for (auto& [k, v] : kv) out += k + "=" + v + "\n";
    return out;
}

std::string WorldConfig::digest() const {
    return sha256_hex(canonical_string());
}

std::vector<int> Vocabulary::entity_tokens() const {
    std::vector<int> out = topic_indist;
    out.insert(out.end(), topic_ood.begin(), topic_ood.end());
    out.insert(out.end(), attr_hi.begin(), attr_hi.end());
    out.insert(out.end(), attr_lo.begin(), attr_lo.end());
    return out;
}

int Vocabulary::id(const std::string& n) const {
    for (int i = 0; i < size(); ++i)
        if (names[static_cast<size_t>(i)] == n) return i;
    throw DataError("vocabulary: unknown token '" + n + "'");
}

const std::string& Vocabulary::name(int id) const {
    if (id < 0 || id >= size()) throw DataError("vocabulary: id " + std::to_string(id) + " out of range");
    return names[static_cast<size_t>(id)];
}

std::string Vocabulary::digest() const {
    std::string all;
    for (auto& n : names) all += n + "\n";
    return sha256_hex(all);
}

Vocabulary build_vocab(const WorldConfig& cfg) {
    Vocabulary v;
    v.names = {"<pad>", "<bos>", "<eos>", "<sep>", "<chosen>", "<rejected>", "<sum>", "<hint>"};
    std::unordered_set<std::string> seen(v.names.begin(), v.names.end());
    auto push = [&](const std::string& n) {
        if (!seen.insert(n).second) throw DataError("build_vocab: duplicate token name '" + n + "'");
        v.names.push_back(n);
        return static_cast<int>(v.names.size()) - 1;
    };
    for (auto& t : cfg.topics) v.topic_indist.push_back(push(t));
    for (auto& t : cfg.topics_ood) v.topic_ood.push_back(push(t));
    if (cfg.mode == WorldConfig::Mode::Attribute) {
        if (cfg.num_attributes != static_cast<int>(cfg.attr_names.size()))
            throw ConfigError("build_vocab: attr_names count must equal num_attributes");
        for (auto& a : cfg.attr_names) {
            v.attr_hi.push_back(push(a + "_hi"));
            v.attr_lo.push_back(push(a + "_lo"));
            v.attr_name.push_back(push(a));
        }
        for (int q = 0; q < cfg.num_questions; ++q) v.questions.push_back(push("q" + std::to_string(q)));
    } else {
        v.prompts.push_back(push("tell"));
        v.prompts.push_back(push("about"));
        v.prompts.push_back(push("pet"));
    }
    for (int f = 0; f < cfg.num_fillers; ++f) {
        std::string n = "filler_";
        n += static_cast<char>('a' + f / 10);
        n += static_cast<char>('0' + f % 10);
        v.fillers.push_back(push(n));
    }
    if (v.size() > 128) throw ConfigError("build_vocab: vocabulary size " + std::to_string(v.size()) + " exceeds 128");
    return v;
}

UserSpec sample_user(const WorldConfig& cfg, const Vocabulary& vocab, bool ood, int user_id, Rng& rng) {
    UserSpec u;
    u.user_id = user_id;
    u.mode = cfg.mode;
    u.ood = ood;
    if (cfg.mode == WorldConfig::Mode::Topic) {
        const auto& pool = ood ? vocab.topic_ood : vocab.topic_indist;
        if (pool.empty()) throw DataError("sample_user: empty topic pool");
        u.topic = pool[static_cast<size_t>(rng.uniform_int(static_cast<int>(pool.size())))];
    } else {
        if (cfg.num_attributes < 2) throw DataError("sample_user: attribute mode needs K >= 2");
        u.weights.assign(static_cast<size_t>(cfg.num_attributes), 0.0f);
        u.weights[static_cast<size_t>(rng.uniform_int(cfg.num_attributes))] = 1.0f;
    }
    return u;
}

Segment render_segment(const Vocabulary& vocab, const Annotation& what, Rng& rng) {
    Segment s;
    s.ann = what;
    s.tokens.push_back(BOS);
    std::vector<int> resp;
    if (what.topic >= 0) {
        bool known = false;
        for (int t : vocab.topic_indist) known |= (t == what.topic);
        for (int t : vocab.topic_ood) known |= (t == what.topic);
        if (!known) throw DataError("render_segment: unknown topic token " + std::to_string(what.topic));
        s.tokens.insert(s.tokens.end(), vocab.prompts.begin(), vocab.prompts.end());
        resp.push_back(what.topic);
        const int nf = 2 + rng.uniform_int(3);
        for (int i = 0; i < nf; ++i)
            resp.push_back(vocab.fillers[static_cast<size_t>(rng.uniform_int(static_cast<int>(vocab.fillers.size())))]);
    } else {
        if (what.attrs.size() != vocab.attr_hi.size())
            throw DataError("render_segment: attribute realization size mismatch");
        s.tokens.push_back(vocab.questions[static_cast<size_t>(rng.uniform_int(static_cast<int>(vocab.questions.size())))]);
        for (size_t k = 0; k < what.attrs.size(); ++k)
            resp.push_back(what.attrs[k] ? vocab.attr_hi[k] : vocab.attr_lo[k]);
        const int nf = 1 + rng.uniform_int(2);
        for (int i = 0; i < nf; ++i)
            resp.push_back(vocab.fillers[static_cast<size_t>(rng.uniform_int(static_cast<int>(vocab.fillers.size())))]);
    }
    shuffle_vec(resp, rng);
    s.tokens.push_back(SEP);
    s.tokens.insert(s.tokens.end(), resp.begin(), resp.end());
    s.tokens.push_back(EOS);
    return s;
}

double oracle_reward(const UserSpec& user, const Segment& s) {
    if (user.mode == WorldConfig::Mode::Topic) {
        if (s.ann.topic < 0) throw DataError("oracle_reward: segment lacks topic annotation");
        return s.ann.topic == user.topic ? 1.0 : 0.0;
    }
    if (s.ann.attrs.size() != user.weights.size())
        throw DataError("oracle_reward: annotation/priority size mismatch");
    double r = 0.0;
    for (size_t k = 0; k < user.weights.size(); ++k) r += user.weights[k] * (s.ann.attrs[k] ? 1.0 : 0.0);
    return r;
}

bool filter_controversial(const std::vector<int>& a, const std::vector<int>& b) {
    bool a_wins = false, b_wins = false;
    for (size_t k = 0; k < a.size(); ++k) {
        if (a[k] > b[k]) a_wins = true;
        if (b[k] > a[k]) b_wins = true;
    }
    return a_wins && b_wins;
}

PreferencePair sample_pair(const UserSpec& user, const Vocabulary& vocab, const WorldConfig& cfg, Rng& rng,
                           double noise_rate) {
    if (noise_rate < 0.0 || noise_rate >= 0.5) throw ConfigError("sample_pair: noise rate must be in [0, 0.5)");
    PreferencePair pair;
    if (cfg.mode == WorldConfig::Mode::Topic) {
        const auto& pool = user.ood ? vocab.topic_ood : vocab.topic_indist;
        std::vector<int> others;
        for (int t : pool)
            if (t != user.topic) others.push_back(t);
        if (others.empty()) throw DataError("sample_pair: degenerate world, no contrasting topic available");
        const int other = others[static_cast<size_t>(rng.uniform_int(static_cast<int>(others.size())))];
        pair.chosen = render_segment(vocab, Annotation{.topic = user.topic}, rng);
        pair.rejected = render_segment(vocab, Annotation{.topic = other}, rng);
    } else {
        const int k = cfg.num_attributes;
        bool found = false;
        for (int attempt = 0; attempt < 100 && !found; ++attempt) {
            std::vector<int> ra(static_cast<size_t>(k)), rb(static_cast<size_t>(k));
            for (int i = 0; i < k; ++i) {
                ra[static_cast<size_t>(i)] = rng.uniform_int(2);
                rb[static_cast<size_t>(i)] = rng.uniform_int(2);
            }
            if (!filter_controversial(ra, rb)) continue;
            Segment sa = render_segment(vocab, Annotation{.attrs = ra}, rng);
            Segment sb = render_segment(vocab, Annotation{.attrs = rb}, rng);
            const double va = oracle_reward(user, sa), vb = oracle_reward(user, sb);
            if (va == vb) continue;
            if (va > vb) {
                pair.chosen = std::move(sa);
                pair.rejected = std::move(sb);
            } else {
                pair.chosen = std::move(sb);
                pair.rejected = std::move(sa);
            }
            found = true;
        }
        if (!found) throw DataError("sample_pair: could not draw an unequal controversial pair in 100 attempts");
    }
    if (noise_rate > 0.0 && rng.uniform() < noise_rate) std::swap(pair.chosen, pair.rejected);
    return pair;
}

std::vector<const DatasetRecord*> Dataset::split(const std::string& name) const {
    std::vector<const DatasetRecord*> out;
    for (auto& r : records)
        if (r.split == name) out.push_back(&r);
    return out;
}

namespace {

struct SegKey {
    // token sequences as strings for set membership
    static std::string of(const Segment& s) {
        std::string k;
        for (int t : s.tokens) {
            k += std::to_string(t);
            k += ',';
        }
        return k;
    }
};

DatasetRecord make_record(const WorldConfig& cfg, const Vocabulary& vocab, const std::string& split,
                          const UserSpec& user, Rng& rng) {
    DatasetRecord rec;
    rec.split = split;
    rec.user_id = user.user_id;
    rec.user = user;
    const int m = cfg.min_context + rng.uniform_int(cfg.max_context - cfg.min_context + 1);
    std::unordered_set<std::string> ctx_keys;
    for (int i = 0; i < m; ++i) {
        PreferencePair p = sample_pair(rec.user, vocab, cfg, rng, cfg.noise_rate);
        ctx_keys.insert(SegKey::of(p.chosen));
        ctx_keys.insert(SegKey::of(p.rejected));
        rec.context.pairs.push_back(std::move(p));
    }
    rec.context.hint = cfg.hint;
    for (int attempt = 0; attempt < 100; ++attempt) {
        PreferencePair p = sample_pair(rec.user, vocab, cfg, rng, cfg.noise_rate);
        if (ctx_keys.count(SegKey::of(p.chosen)) || ctx_keys.count(SegKey::of(p.rejected))) continue;
        rec.eval = std::move(p);
        return rec;
    }
    throw DataError("make_dataset: could not draw an eval pair disjoint from the context");
}

}  // namespace

Dataset make_dataset(const WorldConfig& cfg) {
    Dataset ds;
    ds.config = cfg;
    ds.vocab = build_vocab(cfg);
    if (cfg.n_test_ood > 0 && (cfg.mode != WorldConfig::Mode::Topic || cfg.topics_ood.empty()))
        throw ConfigError("make_dataset: OOD records requested but the config reserves no OOD topics");
    struct SplitSpec {
        const char* name;
        int n, users, id_base;
        bool ood;
        std::uint64_t tag;
    };
    const SplitSpec splits[] = {
        {"train", cfg.n_train, cfg.users_train, 0, false, 11},
        {"test-seen", cfg.n_test_seen, cfg.users_test_seen, 100000, false, 22},
        {"test-ood", cfg.n_test_ood, cfg.users_test_ood, 200000, true, 33},
    };
    for (const auto& sp : splits) {
        if (sp.n > 0 && sp.users <= 0) throw ConfigError("make_dataset: split with records needs users > 0");
        for (int i = 0; i < sp.n; ++i) {
            const int user_id = sp.id_base + (i % sp.users);
            // the user's identity is a function of the user alone; record
            // content gets its own stream keyed by the draw index too
            Rng urng(Rng::mix(Rng::mix(cfg.seed, sp.tag), static_cast<std::uint64_t>(user_id)));
            UserSpec user = sample_user(cfg, ds.vocab, sp.ood, user_id, urng);
            Rng rng(Rng::mix(Rng::mix(cfg.seed, sp.tag), Rng::mix(static_cast<std::uint64_t>(user_id),
                                                                  static_cast<std::uint64_t>(i))));
            ds.records.push_back(make_record(cfg, ds.vocab, sp.name, user, rng));
        }
    }
    return ds;
}

std::vector<int> render_context_tokens(const UserContext& ctx, const Vocabulary& vocab) {
    std::vector<int> out;
    for (const auto& p : ctx.pairs) {
        out.push_back(CHOSEN);
        out.insert(out.end(), p.chosen.tokens.begin() + 1, p.chosen.tokens.end() - 1);
        out.push_back(REJECTED);
        out.insert(out.end(), p.rejected.tokens.begin() + 1, p.rejected.tokens.end() - 1);
    }
    if (ctx.hint) {
        out.push_back(HINT);
        out.insert(out.end(), vocab.attr_name.begin(), vocab.attr_name.end());
    }
    return out;
}

std::string detokenize(const Vocabulary& vocab, std::span<const int> tokens) {
    std::string out;
    for (size_t i = 0; i < tokens.size(); ++i) {
        if (i) out += ' ';
        out += vocab.name(tokens[i]);
    }
    return out;
}

namespace {

json annotation_json(const Vocabulary& vocab, const Annotation& a) {
    json j;
    if (a.topic >= 0) j["topic"] = vocab.name(a.topic);
    if (!a.attrs.empty()) j["attrs"] = a.attrs;
    return j;
}

Annotation annotation_from_json(const Vocabulary& vocab, const json& j) {
    Annotation a;
    if (j.contains("topic")) a.topic = vocab.id(j["topic"].get<std::string>());
    if (j.contains("attrs")) a.attrs = j["attrs"].get<std::vector<int>>();
    return a;
}

json config_json(const WorldConfig& c) {
    return json{{"mode", mode_str(c.mode)},
                {"topics", c.topics},
                {"topics_ood", c.topics_ood},
                {"num_attributes", c.num_attributes},
                {"attr_names", c.attr_names},
                {"hint", c.hint},
                {"num_fillers", c.num_fillers},
                {"num_questions", c.num_questions},
                {"min_context", c.min_context},
                {"max_context", c.max_context},
                {"noise_rate", c.noise_rate},
                {"n_train", c.n_train},
                {"n_test_seen", c.n_test_seen},
                {"n_test_ood", c.n_test_ood},
                {"users_train", c.users_train},
                {"users_test_seen", c.users_test_seen},
                {"users_test_ood", c.users_test_ood},
                {"seed", c.seed}};
}

WorldConfig config_from_json(const json& j) {
    WorldConfig c;
    c.mode = j["mode"].get<std::string>() == "topic" ? WorldConfig::Mode::Topic : WorldConfig::Mode::Attribute;
    c.topics = j["topics"].get<std::vector<std::string>>();
    c.topics_ood = j["topics_ood"].get<std::vector<std::string>>();
    c.num_attributes = j["num_attributes"].get<int>();
    c.attr_names = j["attr_names"].get<std::vector<std::string>>();
    c.hint = j["hint"].get<bool>();
    c.num_fillers = j["num_fillers"].get<int>();
    c.num_questions = j["num_questions"].get<int>();
    c.min_context = j["min_context"].get<int>();
    c.max_context = j["max_context"].get<int>();
    c.noise_rate = j["noise_rate"].get<double>();
    c.n_train = j["n_train"].get<int>();
    c.n_test_seen = j["n_test_seen"].get<int>();
    c.n_test_ood = j["n_test_ood"].get<int>();
    c.users_train = j["users_train"].get<int>();
    c.users_test_seen = j["users_test_seen"].get<int>();
    c.users_test_ood = j["users_test_ood"].get<int>();
    c.seed = j["seed"].get<std::uint64_t>();
    return c;
}

const char* split_file(const std::string& split) {
    if (split == "train") return "train.jsonl";
    if (split == "test-seen") return "test_seen.jsonl";
    if (split == "test-ood") return "test_ood.jsonl";
    throw DataError("unknown split '" + split + "'");
}

}  // namespace

void write_dataset(const Dataset& ds, const std::string& dir) {
    const std::string splits[] = {"train", "test-seen", "test-ood"};
    json files = json::object();
    for (const auto& split : splits) {
        const std::string path = dir + "/" + split_file(split);
        std::ofstream out(path);
        if (!out) throw DataError("write_dataset: cannot open " + path);
        for (const auto& rec : ds.records) {
            if (rec.split != split) continue;
            json ctx = json::array();
            for (const auto& p : rec.context.pairs)
                ctx.push_back(json{{"chosen", p.chosen.tokens}, {"rejected", p.rejected.tokens}});
            json ann{{"user", json::object()},
                     {"eval_chosen", annotation_json(ds.vocab, rec.eval.chosen.ann)},
                     {"eval_rejected", annotation_json(ds.vocab, rec.eval.rejected.ann)}};
            ann["user"]["mode"] = mode_str(rec.user.mode);
            ann["user"]["ood"] = rec.user.ood;
            if (rec.user.topic >= 0) ann["user"]["topic"] = ds.vocab.name(rec.user.topic);
            if (!rec.user.weights.empty()) ann["user"]["weights"] = rec.user.weights;
            json ctx_ann = json::array();
            for (const auto& p : rec.context.pairs)
                ctx_ann.push_back(json{{"chosen", annotation_json(ds.vocab, p.chosen.ann)},
                                       {"rejected", annotation_json(ds.vocab, p.rejected.ann)}});
            ann["context"] = ctx_ann;
            json line{{"user_id", rec.user_id},
                      {"split", rec.split},
                      {"context", ctx},
                      {"eval", json{{"chosen", rec.eval.chosen.tokens}, {"rejected", rec.eval.rejected.tokens}}},
                      {"annotations", ann}};
            out << line.dump() << "\n";
        }
        out.close();
        files[split_file(split)] = sha256_file(path);
    }
    json manifest{{"config", config_json(ds.config)},
                  {"config_digest", ds.config.digest()},
                  {"vocab_digest", ds.vocab.digest()},
                  {"seed", ds.config.seed},
                  {"counts", json{{"train", ds.config.n_train},
                                  {"test-seen", ds.config.n_test_seen},
                                  {"test-ood", ds.config.n_test_ood}}},
                  {"controversial_filter", ds.config.mode == WorldConfig::Mode::Attribute},
                  {"files", files}};
    std::ofstream mf(dir + "/manifest.json");
    if (!mf) throw DataError("write_dataset: cannot open manifest in " + dir);
    mf << manifest.dump(2) << "\n";
}

Dataset load_dataset(const std::string& dir) {
    std::ifstream mf(dir + "/manifest.json");
    if (!mf) throw DataError("load_dataset: missing manifest in " + dir);
    json manifest = json::parse(mf);
    Dataset ds;
    ds.config = config_from_json(manifest["config"]);
    ds.vocab = build_vocab(ds.config);
    const std::string splits[] = {"train", "test-seen", "test-ood"};
    for (const auto& split : splits) {
        const std::string path = dir + "/" + split_file(split);
        std::ifstream in(path);
        if (!in) throw DataError("load_dataset: missing " + path);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            json j = json::parse(line);
            DatasetRecord rec;
            rec.user_id = j["user_id"].get<int>();
            rec.split = j["split"].get<std::string>();
            const json& ann = j["annotations"];
            rec.user.user_id = rec.user_id;
            rec.user.mode = ann["user"]["mode"].get<std::string>() == "topic" ? WorldConfig::Mode::Topic
                                                                              : WorldConfig::Mode::Attribute;
            rec.user.ood = ann["user"]["ood"].get<bool>();
            if (ann["user"].contains("topic")) rec.user.topic = ds.vocab.id(ann["user"]["topic"].get<std::string>());
            if (ann["user"].contains("weights")) rec.user.weights = ann["user"]["weights"].get<std::vector<float>>();
            const json& ctx = j["context"];
            const json& ctx_ann = ann["context"];
            for (size_t i = 0; i < ctx.size(); ++i) {
                PreferencePair p;
                p.chosen.tokens = ctx[i]["chosen"].get<std::vector<int>>();
                p.rejected.tokens = ctx[i]["rejected"].get<std::vector<int>>();
                p.chosen.ann = annotation_from_json(ds.vocab, ctx_ann[i]["chosen"]);
                p.rejected.ann = annotation_from_json(ds.vocab, ctx_ann[i]["rejected"]);
                rec.context.pairs.push_back(std::move(p));
            }
            rec.context.hint = ds.config.hint;
            rec.eval.chosen.tokens = j["eval"]["chosen"].get<std::vector<int>>();
            rec.eval.rejected.tokens = j["eval"]["rejected"].get<std::vector<int>>();
            rec.eval.chosen.ann = annotation_from_json(ds.vocab, ann["eval_chosen"]);
            rec.eval.rejected.ann = annotation_from_json(ds.vocab, ann["eval_rejected"]);
            ds.records.push_back(std::move(rec));
        }
    }
    return ds;
}

}  // namespace plus::mw
