#include "antlm/config.hpp"

#include <map>
#include <sstream>

#include "antlm/data.hpp"
#include "antlm/errors.hpp"
#include "antlm/schedule.hpp"

namespace antlm {

MaskStrategy parse_mask_strategy(const std::string& s) {
    if (s == "subword") return MaskStrategy::Subword;
    if (s == "whole_word") return MaskStrategy::WholeWord;
    if (s == "span") return MaskStrategy::Span;
    throw ConfigError("unknown masking strategy '" + s + "' (want subword|whole_word|span)");
}

const char* mask_strategy_name(MaskStrategy s) {
    switch (s) {
        case MaskStrategy::Subword: return "subword";
        case MaskStrategy::WholeWord: return "whole_word";
        case MaskStrategy::Span: return "span";
    }
    return "?";
}

LRKind parse_lr_kind(const std::string& s) {
    if (s == "cosine") return LRKind::CosineDecay;
    if (s == "cosine_restarts") return LRKind::CosineWithRestarts;
    throw ConfigError("unknown lr schedule '" + s + "' (want cosine|cosine_restarts)");
}

const char* lr_kind_name(LRKind k) {
    return k == LRKind::CosineDecay ? "cosine" : "cosine_restarts";
}

void RunConfig::validate() const {
    model.validate();
    masking.validate();
    parse_schedule(schedule_text);
    clm.lr.validate();
    mlm.lr.validate();
    if (clm.batch_size <= 0 || mlm.batch_size <= 0) {
        throw ConfigError("batch sizes must be positive");
    }
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be nonnegative");
    if (grad_clip_norm < 0.0) throw ConfigError("grad_clip_norm must be nonnegative");
    if (train_seq_len < 0) throw ConfigError("train.seq_len must be nonnegative");
    if (effective_seq_len() > model.max_seq_len) {
        throw ConfigError("train.seq_len exceeds model.max_seq_len");
    }
    if (eval_every <= 0 || log_every <= 0) {
        throw ConfigError("eval_every and log_every must be positive");
    }
    if (tokenizer_vocab_size <= 0) throw ConfigError("tokenizer.vocab_size must be positive");
}

std::vector<std::string> RunConfig::corpus_files() const {
    std::vector<std::string> out;
    std::string cur;
    for (char c : corpus_path) {
        if (c == ',') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

TrainOptions RunConfig::train_options() const {
    TrainOptions o;
    o.schedule = parse_schedule(schedule_text);
    o.clm = clm;
    o.mlm = mlm;
    o.masking = masking;
    o.weight_decay = weight_decay;
    o.grad_clip_norm = grad_clip_norm;
    o.lr_timeline = lr_timeline;
    o.seed = seed;
    o.log_every = log_every;
    o.log_timing = log_timing;
    return o;
}

namespace {

std::string fmt_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

}  // namespace

std::string RunConfig::serialize() const {
    std::ostringstream os;
    os << "model.layers = " << model.layers << "\n";
    os << "model.attention_heads = " << model.attention_heads << "\n";
    os << "model.hidden_size = " << model.hidden_size << "\n";
    os << "model.intermediate_size = " << model.intermediate_size << "\n";
    os << "model.vocab_size = " << model.vocab_size << "\n";
    os << "model.max_seq_len = " << model.max_seq_len << "\n";
    os << "model.position_buckets = " << model.position_buckets << "\n";
    os << "masking.select_rate = " << fmt_double(masking.select_rate) << "\n";
    os << "masking.mask_frac = " << fmt_double(masking.mask_frac) << "\n";
    os << "masking.random_frac = " << fmt_double(masking.random_frac) << "\n";
    os << "masking.keep_frac = " << fmt_double(masking.keep_frac) << "\n";
    os << "masking.strategy = " << mask_strategy_name(masking.strategy) << "\n";
    os << "masking.span_geometric_p = " << fmt_double(masking.span_geometric_p) << "\n";
    os << "masking.span_max = " << masking.span_max << "\n";
    os << "schedule = " << schedule_text << "\n";
    os << "lr_timeline = "
       << (lr_timeline == LRTimeline::PerObjective ? "per-objective" : "global") << "\n";
    os << "clm.lr_schedule = " << lr_kind_name(clm.lr.kind) << "\n";
    os << "clm.base_lr = " << fmt_double(clm.lr.base_lr) << "\n";
    os << "clm.num_cycles = " << clm.lr.num_cycles << "\n";
    os << "clm.warmup_steps = " << clm.lr.warmup_steps << "\n";
    os << "clm.batch_size = " << clm.batch_size << "\n";
    os << "mlm.lr_schedule = " << lr_kind_name(mlm.lr.kind) << "\n";
    os << "mlm.base_lr = " << fmt_double(mlm.lr.base_lr) << "\n";
    os << "mlm.num_cycles = " << mlm.lr.num_cycles << "\n";
    os << "mlm.warmup_steps = " << mlm.lr.warmup_steps << "\n";
    os << "mlm.batch_size = " << mlm.batch_size << "\n";
    os << "optim.weight_decay = " << fmt_double(weight_decay) << "\n";
    os << "optim.grad_clip_norm = " << fmt_double(grad_clip_norm) << "\n";
    os << "seed = " << seed << "\n";
    os << "train.seq_len = " << train_seq_len << "\n";
    os << "eval_every = " << eval_every << "\n";
    os << "log_every = " << log_every << "\n";
    os << "log_timing = " << (log_timing ? "true" : "false") << "\n";
    os << "paths.corpus = " << corpus_path << "\n";
    os << "paths.tokenizer = " << tokenizer_path << "\n";
    os << "paths.checkpoint_dir = " << checkpoint_dir << "\n";
    os << "paths.eval_pairs = " << eval_pairs_path << "\n";
    os << "tokenizer.vocab_size = " << tokenizer_vocab_size << "\n";
    return os.str();
}

namespace {

std::string trim(const std::string& s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

int64_t to_int(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const int64_t out = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing");
        return out;
    } catch (const std::exception&) {
        throw ParseError("config: key '" + key + "' wants an integer, got '" + v + "'");
    }
}

uint64_t to_uint(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const uint64_t out = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing");
        return out;
    } catch (const std::exception&) {
        throw ParseError("config: key '" + key + "' wants an unsigned integer, got '" + v + "'");
    }
}

double to_double(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const double out = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing");
        return out;
    } catch (const std::exception&) {
        throw ParseError("config: key '" + key + "' wants a number, got '" + v + "'");
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ParseError("config: key '" + key + "' wants true/false, got '" + v + "'");
}

}  // namespace

RunConfig RunConfig::parse(const std::string& text) {
    RunConfig c;
    std::istringstream is(text);
    std::string line;
    int64_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ParseError("config line " + std::to_string(lineno) + ": expected key = value");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        if (key.empty()) {
            throw ParseError("config line " + std::to_string(lineno) + ": empty key");
        }

        if (key == "model.layers") c.model.layers = to_int(key, val);
        else if (key == "model.attention_heads") c.model.attention_heads = to_int(key, val);
        else if (key == "model.hidden_size") c.model.hidden_size = to_int(key, val);
        else if (key == "model.intermediate_size") c.model.intermediate_size = to_int(key, val);
        else if (key == "model.vocab_size") c.model.vocab_size = to_int(key, val);
        else if (key == "model.max_seq_len") c.model.max_seq_len = to_int(key, val);
        else if (key == "model.position_buckets") c.model.position_buckets = to_int(key, val);
        else if (key == "masking.select_rate") c.masking.select_rate = to_double(key, val);
        else if (key == "masking.mask_frac") c.masking.mask_frac = to_double(key, val);
        else if (key == "masking.random_frac") c.masking.random_frac = to_double(key, val);
        else if (key == "masking.keep_frac") c.masking.keep_frac = to_double(key, val);
        else if (key == "masking.strategy") c.masking.strategy = parse_mask_strategy(val);
        else if (key == "masking.span_geometric_p") c.masking.span_geometric_p = to_double(key, val);
        else if (key == "masking.span_max") c.masking.span_max = to_int(key, val);
        else if (key == "schedule") c.schedule_text = val;
        else if (key == "lr_timeline") {
            if (val == "per-objective") c.lr_timeline = LRTimeline::PerObjective;
            else if (val == "global") c.lr_timeline = LRTimeline::Global;
            else throw ParseError("config: lr_timeline wants per-objective|global, got '" + val + "'");
        }
        else if (key == "clm.lr_schedule") c.clm.lr.kind = parse_lr_kind(val);
        else if (key == "clm.base_lr") c.clm.lr.base_lr = to_double(key, val);
        else if (key == "clm.num_cycles") c.clm.lr.num_cycles = to_int(key, val);
        else if (key == "clm.warmup_steps") c.clm.lr.warmup_steps = to_int(key, val);
        else if (key == "clm.batch_size") c.clm.batch_size = to_int(key, val);
        else if (key == "mlm.lr_schedule") c.mlm.lr.kind = parse_lr_kind(val);
        else if (key == "mlm.base_lr") c.mlm.lr.base_lr = to_double(key, val);
        else if (key == "mlm.num_cycles") c.mlm.lr.num_cycles = to_int(key, val);
        else if (key == "mlm.warmup_steps") c.mlm.lr.warmup_steps = to_int(key, val);
        else if (key == "mlm.batch_size") c.mlm.batch_size = to_int(key, val);
        else if (key == "optim.weight_decay") c.weight_decay = to_double(key, val);
        else if (key == "optim.grad_clip_norm") c.grad_clip_norm = to_double(key, val);
        else if (key == "seed") c.seed = to_uint(key, val);
        else if (key == "train.seq_len") c.train_seq_len = to_int(key, val);
        else if (key == "eval_every") c.eval_every = to_int(key, val);
        else if (key == "log_every") c.log_every = to_int(key, val);
        else if (key == "log_timing") c.log_timing = to_bool(key, val);
        else if (key == "paths.corpus") c.corpus_path = val;
        else if (key == "paths.tokenizer") c.tokenizer_path = val;
        else if (key == "paths.checkpoint_dir") c.checkpoint_dir = val;
        else if (key == "paths.eval_pairs") c.eval_pairs_path = val;
        else if (key == "tokenizer.vocab_size") c.tokenizer_vocab_size = to_int(key, val);
        else throw ParseError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
    return c;
}

RunConfig RunConfig::load(const std::string& path) {
    return parse(read_file(path));
}

}  // namespace antlm
