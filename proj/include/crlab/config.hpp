#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "crlab/errors.hpp"
#include "crlab/grpo.hpp"
#include "crlab/model.hpp"
#include "crlab/paradigm.hpp"
#include "crlab/sft.hpp"
#include "crlab/tasks.hpp"

namespace crlab {

// Everything a pipeline stage needs, addressable by flat dotted keys in a
// plain-text "key = value" file. Serialization is canonical: every key, fixed
// order, shortest round-trip number formatting.
struct RunConfig {
    std::uint64_t seed = 0;
    Paradigm paradigm = Paradigm::ChainOfThought;
    std::string out_dir;  // empty: derive under the output root

    std::string data_source = "synthetic";  // synthetic | jsonl
    std::string data_family = "modular";
    std::string data_jsonl_path;
    int data_count = 256;
    int data_train_cap = 128;
    int data_eval_size = 64;

    ModelConfig model;
    LoraConfig lora;
    SftConfig sft;
    std::string sft_trajectories;  // JSONL produced by gen-trajectories
    GrpoConfig grpo;
    std::string grpo_init_checkpoint;
    bool grpo_from_scratch = false;
    bool grpo_dump_trajectories = true;
    int grpo_checkpoint_interval = 500;  // periodic checkpoint cadence, 0 = final only

    std::string gen_source = "template";  // template | policy
    std::string gen_checkpoint;
    int gen_max_new_tokens = 256;
    bool gen_keep_incorrect = false;

    std::string eval_method;  // empty: derived from checkpoint provenance
    std::string eval_checkpoint;
    int eval_max_new_tokens = 256;
    std::string eval_dataset;  // empty: derived from the data source

    std::string templates_dir;  // empty: built-in templates
    std::string lexicons_dir;   // empty: built-in lexicon
};

namespace detail {

inline std::string format_u64(std::uint64_t v) { return std::to_string(v); }
inline std::string format_int(int v) { return std::to_string(v); }
inline std::string format_bool(bool v) { return v ? "true" : "false"; }

inline std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& key, const std::string& s) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        throw ConfigError("key '" + key + "': cannot parse real value '" + s + "'");
    }
    return v;
}

inline int parse_int(const std::string& key, const std::string& s) {
    int v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        throw ConfigError("key '" + key + "': cannot parse integer '" + s + "'");
    }
    return v;
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& s) {
    std::uint64_t v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        throw ConfigError("key '" + key + "': cannot parse unsigned value '" + s + "'");
    }
    return v;
}

inline bool parse_bool(const std::string& key, const std::string& s) {
    if (s == "true") return true;
    if (s == "false") return false;
    throw ConfigError("key '" + key + "': expected true|false, got '" + s + "'");
}

inline std::string format_targets(LoraTargetMask mask) {
    std::string out;
    for (int i = 0; i < kLoraTargetCount; ++i) {
        if (mask_has(mask, static_cast<LoraTarget>(i))) {
            if (!out.empty()) {
                out += ',';
            }
            out += lora_target_name(static_cast<LoraTarget>(i));
        }
    }
    return out;
}

inline LoraTargetMask parse_targets(const std::string& key, const std::string& s) {
    LoraTargetMask mask = 0;
    std::size_t start = 0;
    while (start <= s.size()) {
        std::size_t end = s.find(',', start);
        if (end == std::string::npos) {
            end = s.size();
        }
        std::string part = s.substr(start, end - start);
        // allow spaces around commas
        while (!part.empty() && part.front() == ' ') part.erase(part.begin());
        while (!part.empty() && part.back() == ' ') part.pop_back();
        if (!part.empty()) {
            try {
                mask |= target_bit(lora_target_from_name(part));
            } catch (const ConfigError&) {
                throw ConfigError("key '" + key + "': unknown lora target '" + part + "'");
            }
        }
        start = end + 1;
    }
    if (mask == 0) {
        throw ConfigError("key '" + key + "': target list is empty");
    }
    return mask;
}

struct ConfigField {
    std::string key;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

inline const std::vector<ConfigField>& config_fields() {
    static const std::vector<ConfigField> fields = [] {
        std::vector<ConfigField> f;
        auto str = [&f](const char* key, std::string RunConfig::* member) {
            f.push_back({key, [member](const RunConfig& c) { return c.*member; },
                         [member](RunConfig& c, const std::string& v) { c.*member = v; }});
        };
        auto num_i = [&f](const char* key, auto getter, auto setter) {
            f.push_back({key,
                         [getter](const RunConfig& c) { return format_int(getter(c)); },
                         [setter, key = std::string(key)](RunConfig& c, const std::string& v) {
                             setter(c, parse_int(key, v));
                         }});
        };
        auto num_d = [&f](const char* key, auto getter, auto setter) {
            f.push_back({key,
                         [getter](const RunConfig& c) { return format_double(getter(c)); },
                         [setter, key = std::string(key)](RunConfig& c, const std::string& v) {
                             setter(c, parse_double(key, v));
                         }});
        };
        auto num_u = [&f](const char* key, auto getter, auto setter) {
            f.push_back({key,
                         [getter](const RunConfig& c) { return format_u64(getter(c)); },
                         [setter, key = std::string(key)](RunConfig& c, const std::string& v) {
                             setter(c, parse_u64(key, v));
                         }});
        };
        auto boolean = [&f](const char* key, auto getter, auto setter) {
            f.push_back({key,
                         [getter](const RunConfig& c) { return format_bool(getter(c)); },
                         [setter, key = std::string(key)](RunConfig& c, const std::string& v) {
                             setter(c, parse_bool(key, v));
                         }});
        };

        num_u("run.seed", [](const RunConfig& c) { return c.seed; },
              [](RunConfig& c, std::uint64_t v) { c.seed = v; });
        f.push_back({"run.paradigm",
                     [](const RunConfig& c) { return std::string(paradigm_name(c.paradigm)); },
                     [](RunConfig& c, const std::string& v) { c.paradigm = paradigm_from_name(v); }});
        str("run.out_dir", &RunConfig::out_dir);

        str("data.source", &RunConfig::data_source);
        str("data.family", &RunConfig::data_family);
        str("data.jsonl_path", &RunConfig::data_jsonl_path);
        num_i("data.count", [](const RunConfig& c) { return c.data_count; },
              [](RunConfig& c, int v) { c.data_count = v; });
        num_i("data.train_cap", [](const RunConfig& c) { return c.data_train_cap; },
              [](RunConfig& c, int v) { c.data_train_cap = v; });
        num_i("data.eval_size", [](const RunConfig& c) { return c.data_eval_size; },
              [](RunConfig& c, int v) { c.data_eval_size = v; });

        num_i("model.dim", [](const RunConfig& c) { return c.model.dim; },
              [](RunConfig& c, int v) { c.model.dim = v; });
        num_i("model.layers", [](const RunConfig& c) { return c.model.layers; },
              [](RunConfig& c, int v) { c.model.layers = v; });
        num_i("model.heads", [](const RunConfig& c) { return c.model.heads; },
              [](RunConfig& c, int v) { c.model.heads = v; });
        num_i("model.ffw_dim", [](const RunConfig& c) { return c.model.ffw_dim; },
              [](RunConfig& c, int v) { c.model.ffw_dim = v; });
        num_i("model.max_seq_len", [](const RunConfig& c) { return c.model.max_seq_len; },
              [](RunConfig& c, int v) { c.model.max_seq_len = v; });

        num_i("lora.rank", [](const RunConfig& c) { return c.lora.rank; },
              [](RunConfig& c, int v) { c.lora.rank = v; });
        num_d("lora.alpha", [](const RunConfig& c) { return c.lora.alpha; },
              [](RunConfig& c, double v) { c.lora.alpha = v; });
        f.push_back({"lora.targets",
                     [](const RunConfig& c) { return format_targets(c.lora.targets); },
                     [](RunConfig& c, const std::string& v) {
                         c.lora.targets = parse_targets("lora.targets", v);
                     }});

        num_d("sft.lr", [](const RunConfig& c) { return c.sft.lr; },
              [](RunConfig& c, double v) { c.sft.lr = v; });
        num_i("sft.batch_size", [](const RunConfig& c) { return c.sft.batch_size; },
              [](RunConfig& c, int v) { c.sft.batch_size = v; });
        num_i("sft.epochs", [](const RunConfig& c) { return c.sft.epochs; },
              [](RunConfig& c, int v) { c.sft.epochs = v; });
        num_d("sft.weight_decay", [](const RunConfig& c) { return c.sft.weight_decay; },
              [](RunConfig& c, double v) { c.sft.weight_decay = v; });
        str("sft.trajectories", &RunConfig::sft_trajectories);

        num_i("grpo.group_size", [](const RunConfig& c) { return c.grpo.group_size; },
              [](RunConfig& c, int v) { c.grpo.group_size = v; });
        num_d("grpo.lr", [](const RunConfig& c) { return c.grpo.lr; },
              [](RunConfig& c, double v) { c.grpo.lr = v; });
        num_i("grpo.prompt_batch", [](const RunConfig& c) { return c.grpo.prompt_batch; },
              [](RunConfig& c, int v) { c.grpo.prompt_batch = v; });
        num_i("grpo.steps", [](const RunConfig& c) { return c.grpo.total_steps; },
              [](RunConfig& c, int v) { c.grpo.total_steps = v; });
        num_d("grpo.temperature", [](const RunConfig& c) { return c.grpo.temperature; },
              [](RunConfig& c, double v) { c.grpo.temperature = v; });
        num_d("grpo.clip_ratio", [](const RunConfig& c) { return c.grpo.clip_ratio; },
              [](RunConfig& c, double v) { c.grpo.clip_ratio = v; });
        num_d("grpo.kl_beta", [](const RunConfig& c) { return c.grpo.kl_beta; },
              [](RunConfig& c, double v) { c.grpo.kl_beta = v; });
        num_d("grpo.adv_eps", [](const RunConfig& c) { return c.grpo.adv_eps; },
              [](RunConfig& c, double v) { c.grpo.adv_eps = v; });
        num_i("grpo.max_new_tokens", [](const RunConfig& c) { return c.grpo.max_new_tokens; },
              [](RunConfig& c, int v) { c.grpo.max_new_tokens = v; });
        num_i("grpo.ref_refresh",
              [](const RunConfig& c) { return c.grpo.ref_refresh_interval; },
              [](RunConfig& c, int v) { c.grpo.ref_refresh_interval = v; });
        num_d("grpo.weight_decay", [](const RunConfig& c) { return c.grpo.weight_decay; },
              [](RunConfig& c, double v) { c.grpo.weight_decay = v; });
        str("grpo.init_checkpoint", &RunConfig::grpo_init_checkpoint);
        boolean("grpo.from_scratch", [](const RunConfig& c) { return c.grpo_from_scratch; },
                [](RunConfig& c, bool v) { c.grpo_from_scratch = v; });
        boolean("grpo.dump_trajectories",
                [](const RunConfig& c) { return c.grpo_dump_trajectories; },
                [](RunConfig& c, bool v) { c.grpo_dump_trajectories = v; });
        num_i("grpo.checkpoint_interval",
              [](const RunConfig& c) { return c.grpo_checkpoint_interval; },
              [](RunConfig& c, int v) { c.grpo_checkpoint_interval = v; });

        str("gen.source", &RunConfig::gen_source);
        str("gen.checkpoint", &RunConfig::gen_checkpoint);
        num_i("gen.max_new_tokens", [](const RunConfig& c) { return c.gen_max_new_tokens; },
              [](RunConfig& c, int v) { c.gen_max_new_tokens = v; });
        boolean("gen.keep_incorrect", [](const RunConfig& c) { return c.gen_keep_incorrect; },
                [](RunConfig& c, bool v) { c.gen_keep_incorrect = v; });

        str("eval.method", &RunConfig::eval_method);
        str("eval.checkpoint", &RunConfig::eval_checkpoint);
        num_i("eval.max_new_tokens", [](const RunConfig& c) { return c.eval_max_new_tokens; },
              [](RunConfig& c, int v) { c.eval_max_new_tokens = v; });
        str("eval.dataset", &RunConfig::eval_dataset);

        str("templates.dir", &RunConfig::templates_dir);
        str("lexicons.dir", &RunConfig::lexicons_dir);
        return f;
    }();
    return fields;
}

}  // namespace detail

// Canonical text form: every key in registry order. parse(serialize(c)) == c.
inline std::string serialize_config(const RunConfig& cfg) {
    std::string out;
    for (const auto& field : detail::config_fields()) {
        out += field.key;
        out += " = ";
        out += field.get(cfg);
        out += '\n';
    }
    return out;
}

// Accepts "key = value" lines, blank lines, and '#' comments. Unknown keys are
// configuration errors so typos cannot silently change a run.
inline RunConfig parse_config(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t')) {
            line.pop_back();
        }
        std::size_t start = line.find_first_not_of(" \t");
        if (start == std::string::npos || line[start] == '#') {
            continue;
        }
        const std::size_t eq = line.find('=', start);
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
        }
        std::string key = line.substr(start, eq - start);
        while (!key.empty() && (key.back() == ' ' || key.back() == '\t')) {
            key.pop_back();
        }
        std::string value = line.substr(eq + 1);
        std::size_t vstart = value.find_first_not_of(" \t");
        value = (vstart == std::string::npos) ? std::string() : value.substr(vstart);

        bool known = false;
        for (const auto& field : detail::config_fields()) {
            if (field.key == key) {
                field.set(cfg, value);
                known = true;
                break;
            }
        }
        if (!known) {
            throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + key + "'");
        }
    }
    return cfg;
}

inline RunConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open config file '" + path + "'");
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

inline void save_config_file(const RunConfig& cfg, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("cannot open '" + path + "' for writing");
    }
    out << serialize_config(cfg);
    if (!out) {
        throw IoError("short write to '" + path + "'");
    }
}

}  // namespace crlab
