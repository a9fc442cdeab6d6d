#include "qtart/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace qtart {

namespace {

std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) {
            out.push_back(item);
        }
    }
    return out;
}

}  // namespace

ConfigMap ConfigMap::defaults() {
    ConfigMap m;
    m.values_ = {
        {"run.mode", "qtart"},
        {"run.epochs", "30"},
        {"run.tau", "5"},
        {"run.batch_size", "64"},
        {"run.smoothing", "0"},
        {"run.weight_seed", "0"},
        {"run.shuffle_seed", "0"},

        {"data.source", "synthetic"},
        {"data.format", "qtds"},
        {"data.train", ""},
        {"data.train_labels", ""},
        {"data.test", ""},
        {"data.test_labels", ""},

        {"synth.samples", "1000"},
        {"synth.test_samples", "400"},
        {"synth.classes", "4"},
        {"synth.channels", "3"},
        {"synth.height", "16"},
        {"synth.width", "16"},
        {"synth.outliers", "50"},
        {"synth.outlier_sigma", "0.5"},
        {"synth.jitter", "0.05"},
        {"synth.separation", "1"},
        {"synth.seed", "0"},

        {"model.channels", "8,16"},
        {"model.kernel", "3"},
        {"model.pool", "true"},
        {"model.hidden", ""},

        {"optim.lr", "0.01"},
        {"optim.momentum", "0.9"},
        {"optim.weight_decay", "0"},
        {"optim.schedule", "constant"},
        {"optim.milestones", ""},
        {"optim.multiplier", "0.1"},
        {"optim.lr_min", "0"},
        {"optim.lr_max", "0.02"},

        {"qtart.gamma", "50"},
        {"qtart.label_budget", "0"},
        {"qtart.window", "last-layer"},
        {"qtart.window_weights", ""},
        {"qtart.filters", ""},
        {"qtart.metric", "l1-norm"},
        {"qtart.batch_size", "128"},

        {"noise.sigma", "0.5"},
        {"noise.seed", "0"},

        {"projection.dims", "4"},
        {"projection.method", "average-pool"},
        {"projection.seed", "0"},

        {"adv.eps", "0.031372549019607843"},
        {"adv.step", "0.039215686274509803"},
        {"adv.replays", "4"},
        {"adv.seed", "0"},

        {"attack.suite", "pgd,mifgsm,ffgsm,fgsm"},
        {"attack.seed", "0"},
        {"attack.fgsm.eps", "0.031372549019607843"},
        {"attack.ffgsm.eps", "0.031372549019607843"},
        {"attack.ffgsm.step", "0.039215686274509803"},
        {"attack.pgd.eps", "0.031"},
        {"attack.pgd.step", "0.00775"},
        {"attack.pgd.steps", "20"},
        {"attack.pgd.random_init", "true"},
        {"attack.mifgsm.eps", "0.031372549019607843"},
        {"attack.mifgsm.step", "0.0078431372549019607"},
        {"attack.mifgsm.decay", "1"},
        {"attack.mifgsm.steps", "5"},

        {"transfer.sources", ""},
    };
    return m;
}

void ConfigMap::merge_text(const std::string& text, const std::string& origin) {
    std::istringstream in(text);
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) {
            line.erase(hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        if (line.front() == '[' && line.back() == ']') {
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::invalid_argument(origin + ":" + std::to_string(lineno) + ": expected key = value");
        }
        std::string key = trim(line.substr(0, eq));
        if (!section.empty() && key.rfind(section + ".", 0) != 0) {
            key = section + "." + key;
        }
        try {
            set(key, trim(line.substr(eq + 1)));
        } catch (const std::invalid_argument& e) {
            throw std::invalid_argument(origin + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
}

void ConfigMap::merge_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot read config '" + path.string() + "'");
    }
    std::stringstream ss;
    ss << in.rdbuf();
    merge_text(ss.str(), path.string());
}

void ConfigMap::set(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) {
        throw std::invalid_argument("override '" + assignment + "' is not of the form key=value");
    }
    set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void ConfigMap::set(const std::string& key, const std::string& value) {
    if (!values_.empty() && !has(key)) {
        throw std::invalid_argument("unknown config key '" + key + "'");
    }
    values_[key] = value;
}

const std::string& ConfigMap::get(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) {
        throw std::invalid_argument("missing config key '" + key + "'");
    }
    return it->second;
}

double ConfigMap::number(const std::string& key) const {
    const std::string& v = get(key);
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size()) {
            throw std::invalid_argument("trailing");
        }
        return d;
    } catch (const std::exception&) {
        throw std::invalid_argument("config key '" + key + "': '" + v + "' is not a number");
    }
}

std::uint64_t ConfigMap::seed(const std::string& key) const {
    const std::string& v = get(key);
    std::uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
        throw std::invalid_argument("config key '" + key + "': '" + v + "' is not a non-negative integer");
    }
    return out;
}

std::size_t ConfigMap::count(const std::string& key) const { return static_cast<std::size_t>(seed(key)); }

bool ConfigMap::flag(const std::string& key) const {
    const std::string& v = get(key);
    if (v == "true" || v == "1" || v == "yes") {
        return true;
    }
    if (v == "false" || v == "0" || v == "no") {
        return false;
    }
    throw std::invalid_argument("config key '" + key + "': '" + v + "' is not a boolean");
}

std::vector<std::size_t> ConfigMap::counts(const std::string& key) const {
    std::vector<std::size_t> out;
    for (const std::string& item : split_list(get(key))) {
        ConfigMap tmp;
        tmp.values_[key] = item;
        out.push_back(tmp.count(key));
    }
    return out;
}

std::vector<double> ConfigMap::numbers(const std::string& key) const {
    std::vector<double> out;
    for (const std::string& item : split_list(get(key))) {
        ConfigMap tmp;
        tmp.values_[key] = item;
        out.push_back(tmp.number(key));
    }
    return out;
}

std::vector<std::string> ConfigMap::strings(const std::string& key) const { return split_list(get(key)); }

std::string ConfigMap::canonical() const {
    std::string out;
    for (const auto& [k, v] : values_) {
        out += k + " = " + v + "\n";
    }
    return out;
}

std::string ConfigMap::fingerprint() const { return fingerprint_hex(canonical()); }

void ConfigMap::set_all_seeds(std::uint64_t seed) {
    const std::string s = std::to_string(seed);
    for (auto& [k, v] : values_) {
        if (k.size() >= 5 && k.compare(k.size() - 5, 5, ".seed") == 0) {
            v = s;
        }
        if (k == "run.weight_seed" || k == "run.shuffle_seed") {
            v = s;
        }
    }
}

RunConfig decode_config(const ConfigMap& m) {
    RunConfig rc;
    ExperimentConfig& e = rc.experiment;
    e.mode = parse_mode(m.get("run.mode"));
    e.epochs = m.count("run.epochs");
    e.tau = m.count("run.tau");
    e.batch_size = m.count("run.batch_size");
    e.smoothing = m.number("run.smoothing");
    e.shuffle_seed = m.seed("run.shuffle_seed");
    rc.weight_seed = m.seed("run.weight_seed");

    e.optimizer.learning_rate = m.number("optim.lr");
    e.optimizer.momentum = m.number("optim.momentum");
    e.optimizer.weight_decay = m.number("optim.weight_decay");
    switch (parse_schedule_kind(m.get("optim.schedule"))) {
    case LrSchedule::Kind::constant:
        e.schedule = LrSchedule::constant(e.optimizer.learning_rate);
        break;
    case LrSchedule::Kind::step:
        e.schedule = LrSchedule::step(e.optimizer.learning_rate, m.counts("optim.milestones"),
                                      m.number("optim.multiplier"));
        break;
    case LrSchedule::Kind::cyclic:
        e.schedule = LrSchedule::cyclic(m.number("optim.lr_min"), m.number("optim.lr_max"), e.epochs);
        break;
    }

    e.gamma = m.count("qtart.gamma");
    e.label_budget = m.count("qtart.label_budget");
    e.scoring.window.kind = parse_window_kind(m.get("qtart.window"));
    e.scoring.window.custom = m.numbers("qtart.window_weights");
    e.scoring.filters_per_layer = m.counts("qtart.filters");
    e.scoring.metric = parse_importance_metric(m.get("qtart.metric"));
    e.scoring.batch_size = m.count("qtart.batch_size");
    e.scoring.noise.sigma = m.number("noise.sigma");
    e.scoring.noise.seed = m.seed("noise.seed");
    e.scoring.projection.dims = m.count("projection.dims");
    e.scoring.projection.method = parse_projection_method(m.get("projection.method"));
    e.scoring.projection.seed = m.seed("projection.seed");

    e.adv.eps = m.number("adv.eps");
    e.adv.step = m.number("adv.step");
    e.adv.replays = m.count("adv.replays");
    e.adv.seed = m.seed("adv.seed");

    rc.data_source = m.get("data.source");
    if (rc.data_source != "synthetic" && rc.data_source != "file") {
        throw std::invalid_argument("data.source must be 'synthetic' or 'file'");
    }
    rc.format = parse_image_format(m.get("data.format"));
    rc.train_path = m.get("data.train");
    rc.train_labels = m.get("data.train_labels");
    rc.test_path = m.get("data.test");
    rc.test_labels = m.get("data.test_labels");

    rc.synth.samples = m.count("synth.samples");
    rc.synth.classes = m.count("synth.classes");
    rc.synth.channels = m.count("synth.channels");
    rc.synth.height = m.count("synth.height");
    rc.synth.width = m.count("synth.width");
    rc.synth.outliers = m.count("synth.outliers");
    rc.synth.outlier_sigma = m.number("synth.outlier_sigma");
    rc.synth.jitter = m.number("synth.jitter");
    rc.synth.class_separation = m.number("synth.separation");
    rc.synth.seed = m.seed("synth.seed");
    rc.synth_test_samples = m.count("synth.test_samples");

    rc.net.channels = m.counts("model.channels");
    rc.net.kernel = m.count("model.kernel");
    rc.net.pool = m.flag("model.pool");
    rc.net.hidden = m.counts("model.hidden");

    const std::uint64_t attack_seed = m.seed("attack.seed");
    for (const std::string& name : m.strings("attack.suite")) {
        AttackSpec a;
        switch (parse_attack_kind(name)) {
        case AttackKind::fgsm:
            a = AttackSpec::fgsm(m.number("attack.fgsm.eps"));
            break;
        case AttackKind::ffgsm:
            a = AttackSpec::ffgsm(m.number("attack.ffgsm.eps"), m.number("attack.ffgsm.step"));
            break;
        case AttackKind::pgd:
            a = AttackSpec::pgd(m.number("attack.pgd.eps"), m.number("attack.pgd.step"), m.count("attack.pgd.steps"),
                                m.flag("attack.pgd.random_init"));
            break;
        case AttackKind::mifgsm:
            a = AttackSpec::mifgsm(m.number("attack.mifgsm.eps"), m.number("attack.mifgsm.step"),
                                   m.number("attack.mifgsm.decay"), m.count("attack.mifgsm.steps"));
            break;
        }
        a.seed = attack_seed;
        a.validate();
        rc.attacks.push_back(a);
    }
    for (const std::string& p : m.strings("transfer.sources")) {
        rc.transfer_sources.emplace_back(p);
    }
    rc.fingerprint = m.fingerprint();
    return rc;
}

DataPair load_data(const RunConfig& cfg) {
    DataPair out;
    if (cfg.data_source == "synthetic") {
        out.train = generate_synthetic(cfg.synth);
        SyntheticSpec test = cfg.synth;
        test.samples = cfg.synth_test_samples;
        test.outliers = 0;
        test.split = 1;
        out.test = generate_synthetic(test);
        return out;
    }
    if (cfg.train_path.empty()) {
        throw std::invalid_argument("data.train must name a file when data.source = file");
    }
    out.train = load_image_dataset(cfg.train_path, cfg.format, cfg.train_labels);
    if (!cfg.test_path.empty()) {
        out.test = load_image_dataset(cfg.test_path, cfg.format, cfg.test_labels);
    }
    return out;
}

}  // namespace qtart
