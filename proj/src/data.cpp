#include "fedmekt/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "fedmekt/rng.hpp"

namespace fedmekt {

double MultimodalDataset::value(Mod m, std::size_t i, std::size_t t, std::size_t j) const {
    const auto& x = m == Mod::A ? xa : xb;
    std::size_t d = dim(m);
    return x[(i * t_seq + t) * d + j];
}

double& MultimodalDataset::value(Mod m, std::size_t i, std::size_t t, std::size_t j) {
    auto& x = m == Mod::A ? xa : xb;
    std::size_t d = dim(m);
    return x[(i * t_seq + t) * d + j];
}

Tensor MultimodalDataset::step_matrix(Mod m, const std::vector<int>& rows, std::size_t t) const {
    std::size_t d = dim(m);
    Tensor out = Tensor::zeros({rows.size(), d});
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t j = 0; j < d; ++j)
            out.at(r, j) = value(m, static_cast<std::size_t>(rows[r]), t, j);
    return out;
}

std::vector<Tensor> MultimodalDataset::step_sequence(Mod m, const std::vector<int>& rows) const {
    std::vector<Tensor> out;
    out.reserve(t_seq);
    for (std::size_t t = 0; t < t_seq; ++t) out.push_back(step_matrix(m, rows, t));
    return out;
}

std::vector<int> MultimodalDataset::labels_of(const std::vector<int>& rows) const {
    if (!labels) throw std::runtime_error("dataset has no labels");
    std::vector<int> out;
    out.reserve(rows.size());
    for (int r : rows) out.push_back((*labels)[static_cast<std::size_t>(r)]);
    return out;
}

MultimodalDataset MultimodalDataset::subset(const std::vector<int>& rows) const {
    MultimodalDataset out;
    out.name_a = name_a;
    out.name_b = name_b;
    out.n = rows.size();
    out.t_seq = t_seq;
    out.d_a = d_a;
    out.d_b = d_b;
    out.classes = classes;
    out.xa.resize(rows.size() * t_seq * d_a);
    out.xb.resize(rows.size() * t_seq * d_b);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        auto i = static_cast<std::size_t>(rows[r]);
        std::copy_n(xa.begin() + static_cast<std::ptrdiff_t>(i * t_seq * d_a), t_seq * d_a,
                    out.xa.begin() + static_cast<std::ptrdiff_t>(r * t_seq * d_a));
        std::copy_n(xb.begin() + static_cast<std::ptrdiff_t>(i * t_seq * d_b), t_seq * d_b,
                    out.xb.begin() + static_cast<std::ptrdiff_t>(r * t_seq * d_b));
    }
    if (labels) {
        out.labels.emplace();
        for (int r : rows) out.labels->push_back((*labels)[static_cast<std::size_t>(r)]);
    }
    if (groups) {
        out.groups.emplace();
        for (int r : rows) out.groups->push_back((*groups)[static_cast<std::size_t>(r)]);
    }
    return out;
}

std::vector<int> MultimodalDataset::all_rows() const {
    std::vector<int> out(n);
    std::iota(out.begin(), out.end(), 0);
    return out;
}

void MultimodalDataset::validate() const {
    if (xa.size() != n * t_seq * d_a || xb.size() != n * t_seq * d_b)
        throw std::runtime_error("dataset: buffer sizes do not match n*t_seq*d");
    if (labels && labels->size() != n)
        throw std::runtime_error("dataset: label count does not match n");
    if (groups && groups->size() != n)
        throw std::runtime_error("dataset: group count does not match n");
    if (labels)
        for (int l : *labels)
            if (l < 0 || static_cast<std::size_t>(l) >= classes)
                throw std::runtime_error("dataset: label " + std::to_string(l) +
                                         " outside [0," + std::to_string(classes) + ")");
}

// ---------------------------------------------------------------------------
// CSV loading
// ---------------------------------------------------------------------------

CsvSchema load_schema(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open schema file '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("schema '" + path + "': " + e.what());
    }
    CsvSchema s;
    try {
        s.name_a = j.at("modality_a").at("name").get<std::string>();
        s.cols_a = j.at("modality_a").at("columns").get<std::vector<std::string>>();
        s.name_b = j.at("modality_b").at("name").get<std::string>();
        s.cols_b = j.at("modality_b").at("columns").get<std::vector<std::string>>();
        s.label_col = j.at("label").get<std::string>();
        s.group_col = j.value("group", "");
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("schema '" + path + "': " + e.what());
    }
    if (s.cols_a.empty() || s.cols_b.empty())
        throw std::runtime_error("schema '" + path + "': empty column list");
    return s;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    for (auto& s : out) {
        std::size_t b = s.find_first_not_of(" \t");
        std::size_t e = s.find_last_not_of(" \t");
        s = b == std::string::npos ? "" : s.substr(b, e - b + 1);
    }
    return out;
}

double parse_number(const std::string& s, std::size_t line_no, const std::string& col) {
    try {
        std::size_t used = 0;
        double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw std::runtime_error("csv line " + std::to_string(line_no) + ", column '" + col +
                                 "': cannot parse '" + s + "' as a number");
    }
}

int parse_int(const std::string& s, std::size_t line_no, const std::string& col) {
    int v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
        throw std::runtime_error("csv line " + std::to_string(line_no) + ", column '" + col +
                                 "': cannot parse '" + s + "' as an integer");
    return v;
}

}  // namespace

MultimodalDataset load_csv(const std::string& path, const CsvSchema& schema, std::size_t t_seq,
                           std::size_t stride) {
    if (t_seq == 0 || stride == 0)
        throw std::invalid_argument("load_csv: t_seq and stride must be positive");
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open csv file '" + path + "'");

    std::string header_line;
    if (!std::getline(in, header_line) || header_line.empty())
        throw std::runtime_error("csv '" + path + "': missing header row");
    std::vector<std::string> header = split_csv_line(header_line);

    auto col_index = [&](const std::string& name) {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end())
            throw std::runtime_error("csv '" + path + "': required column '" + name +
                                     "' not found in header");
        return static_cast<std::size_t>(it - header.begin());
    };

    std::vector<std::size_t> ia, ib;
    for (const auto& c : schema.cols_a) ia.push_back(col_index(c));
    for (const auto& c : schema.cols_b) ib.push_back(col_index(c));
    std::size_t il = col_index(schema.label_col);
    bool has_group = !schema.group_col.empty();
    std::size_t ig = has_group ? col_index(schema.group_col) : 0;

    struct Row {
        std::vector<double> a, b;
        int label;
        int group;
    };
    std::vector<Row> rows;
    std::string line;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> cells = split_csv_line(line);
        if (cells.size() != header.size())
            throw std::runtime_error("csv line " + std::to_string(line_no) + ": has " +
                                     std::to_string(cells.size()) + " cells, header has " +
                                     std::to_string(header.size()));
        Row r;
        for (std::size_t k = 0; k < ia.size(); ++k)
            r.a.push_back(parse_number(cells[ia[k]], line_no, schema.cols_a[k]));
        for (std::size_t k = 0; k < ib.size(); ++k)
            r.b.push_back(parse_number(cells[ib[k]], line_no, schema.cols_b[k]));
        r.label = parse_int(cells[il], line_no, schema.label_col);
        r.group = has_group ? parse_int(cells[ig], line_no, schema.group_col) : 0;
        rows.push_back(std::move(r));
    }
    if (rows.empty()) throw std::runtime_error("csv '" + path + "': no data rows");

    // Dense label ids in ascending raw order.
    std::map<int, int> label_map;
    for (const Row& r : rows) label_map.emplace(r.label, 0);
    int next = 0;
    for (auto& [raw, dense] : label_map) dense = next++;

    MultimodalDataset out;
    out.name_a = schema.name_a;
    out.name_b = schema.name_b;
    out.t_seq = t_seq;
    out.d_a = schema.cols_a.size();
    out.d_b = schema.cols_b.size();
    out.classes = label_map.size();
    out.labels.emplace();
    if (has_group) out.groups.emplace();

    // Window each contiguous group run separately.
    std::size_t run_start = 0;
    while (run_start < rows.size()) {
        std::size_t run_end = run_start + 1;
        while (run_end < rows.size() && rows[run_end].group == rows[run_start].group) ++run_end;
        for (std::size_t off = run_start; off + t_seq <= run_end; off += stride) {
            for (std::size_t t = 0; t < t_seq; ++t) {
                const Row& r = rows[off + t];
                out.xa.insert(out.xa.end(), r.a.begin(), r.a.end());
                out.xb.insert(out.xb.end(), r.b.begin(), r.b.end());
            }
            // Majority label; ties go to the smaller dense id.
            std::map<int, std::size_t> counts;
            for (std::size_t t = 0; t < t_seq; ++t) ++counts[label_map[rows[off + t].label]];
            int best = -1;
            std::size_t best_count = 0;
            for (const auto& [lab, cnt] : counts)
                if (cnt > best_count) {
                    best = lab;
                    best_count = cnt;
                }
            out.labels->push_back(best);
            if (has_group) out.groups->push_back(rows[off].group);
            ++out.n;
        }
        run_start = run_end;
    }

    if (out.n == 0)
        throw std::runtime_error("csv '" + path + "': " + std::to_string(rows.size()) +
                                 " rows produce no windows of length " + std::to_string(t_seq));
    out.validate();
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic generator
// ---------------------------------------------------------------------------

MultimodalDataset synth_generate(const SynthSpec& spec, std::uint64_t seed) {
    if (spec.classes == 0 || spec.n == 0 || spec.t_seq == 0 || spec.latent_dim == 0 ||
        spec.d_a == 0 || spec.d_b == 0)
        throw std::invalid_argument("synth_generate: all sizes must be positive");
    if (spec.sigma < 0.0) throw std::invalid_argument("synth_generate: sigma must be >= 0");

    Rng rng(seed);
    std::size_t L = spec.latent_dim;

    std::vector<double> latents(spec.classes * L);
    for (double& v : latents) v = rng.normal();

    double scale = 1.0 / std::sqrt(static_cast<double>(L));
    std::vector<double> map_a(L * spec.d_a), map_b(L * spec.d_b);
    for (double& v : map_a) v = rng.normal() * scale;
    for (double& v : map_b) v = rng.normal() * scale;

    MultimodalDataset out;
    out.n = spec.n;
    out.t_seq = spec.t_seq;
    out.d_a = spec.d_a;
    out.d_b = spec.d_b;
    out.classes = spec.classes;
    out.xa.resize(spec.n * spec.t_seq * spec.d_a);
    out.xb.resize(spec.n * spec.t_seq * spec.d_b);
    out.labels.emplace(spec.n, 0);

    auto project = [&](const std::vector<double>& m, std::size_t c, std::size_t j,
                       std::size_t d) {
        double acc = 0.0;
        for (std::size_t l = 0; l < L; ++l) acc += latents[c * L + l] * m[l * d + j];
        return acc;
    };

    for (std::size_t i = 0; i < spec.n; ++i) {
        std::size_t c = i % spec.classes;
        (*out.labels)[i] = static_cast<int>(c);
        for (std::size_t t = 0; t < spec.t_seq; ++t) {
            for (std::size_t j = 0; j < spec.d_a; ++j)
                out.value(Mod::A, i, t, j) =
                    project(map_a, c, j, spec.d_a) + spec.sigma * rng.normal();
            for (std::size_t j = 0; j < spec.d_b; ++j)
                out.value(Mod::B, i, t, j) =
                    project(map_b, c, j, spec.d_b) + spec.sigma * rng.normal();
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Partitioning
// ---------------------------------------------------------------------------

std::vector<ClientAssignment> partition(const MultimodalDataset& data, const PartitionSpec& spec,
                                        std::uint64_t seed) {
    std::size_t K = spec.clients;
    if (K == 0) throw std::invalid_argument("partition: need at least one client");
    if (K > data.n)
        throw std::invalid_argument("partition: " + std::to_string(K) + " clients but only " +
                                    std::to_string(data.n) + " samples");
    if (spec.mode == ClientMode::Mixed && spec.mixed_mm + spec.mixed_a + spec.mixed_b != K)
        throw std::invalid_argument("partition: mixed counts must sum to the client count");

    Rng rng(seed);
    std::vector<ClientAssignment> out(K);

    if (spec.dirichlet_alpha <= 0.0) {
        std::vector<int> rows = data.all_rows();
        rng.shuffle(rows);
        for (std::size_t i = 0; i < rows.size(); ++i) out[i % K].rows.push_back(rows[i]);
    } else {
        if (!data.labels) throw std::invalid_argument("partition: label skew needs labels");
        // Per class: shuffle its rows and cut at the cumulative Dirichlet
        // proportions.
        for (std::size_t c = 0; c < data.classes; ++c) {
            std::vector<int> rows;
            for (std::size_t i = 0; i < data.n; ++i)
                if ((*data.labels)[i] == static_cast<int>(c)) rows.push_back(static_cast<int>(i));
            if (rows.empty()) continue;
            rng.shuffle(rows);
            std::vector<double> props = rng.dirichlet(spec.dirichlet_alpha, K);
            double cum = 0.0;
            std::size_t start = 0;
            for (std::size_t k = 0; k < K; ++k) {
                cum += props[k];
                std::size_t end = k + 1 == K
                                      ? rows.size()
                                      : std::min(rows.size(),
                                                 static_cast<std::size_t>(
                                                     cum * static_cast<double>(rows.size())));
                for (std::size_t i = start; i < end; ++i) out[k].rows.push_back(rows[i]);
                start = end;
            }
        }
    }

    // Sparse label skews can leave a client with nothing to train on; hand it
    // one row from the currently largest client.
    for (std::size_t k = 0; k < K; ++k) {
        if (!out[k].rows.empty()) continue;
        std::size_t big = 0;
        for (std::size_t j = 1; j < K; ++j)
            if (out[j].rows.size() > out[big].rows.size()) big = j;
        out[k].rows.push_back(out[big].rows.back());
        out[big].rows.pop_back();
    }

    for (std::size_t k = 0; k < K; ++k) {
        std::sort(out[k].rows.begin(), out[k].rows.end());
        if (spec.mode == ClientMode::Mixed) {
            out[k].has_a = k < spec.mixed_mm || (k >= spec.mixed_mm && k < spec.mixed_mm + spec.mixed_a);
            out[k].has_b = k < spec.mixed_mm || k >= spec.mixed_mm + spec.mixed_a;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

Splits make_splits(const MultimodalDataset& data, const SplitSpec& spec, std::uint64_t seed) {
    if (spec.proxy < 0 || spec.labeled < 0 || spec.test < 0 ||
        spec.proxy + spec.labeled + spec.test >= 1.0)
        throw std::invalid_argument("make_splits: fractions must be non-negative and sum < 1");
    if (spec.proxy_keep <= 0.0 || spec.proxy_keep > 1.0)
        throw std::invalid_argument("make_splits: proxy_keep must be in (0,1]");

    Rng rng(seed);
    std::vector<int> proxy_rows, labeled_rows, test_rows, train_rows;

    if (data.groups) {
        // Hold out whole participants. Greedily fill test, then proxy, then
        // labeled until each target fraction is reached.
        std::map<int, std::vector<int>> by_group;
        for (std::size_t i = 0; i < data.n; ++i)
            by_group[(*data.groups)[i]].push_back(static_cast<int>(i));
        std::vector<int> gids;
        for (const auto& [g, _] : by_group) gids.push_back(g);
        rng.shuffle(gids);

        auto n_d = static_cast<double>(data.n);
        auto want_test = static_cast<std::size_t>(spec.test * n_d);
        auto want_proxy = static_cast<std::size_t>(spec.proxy * n_d);
        auto want_labeled = static_cast<std::size_t>(spec.labeled * n_d);
        for (int g : gids) {
            auto& rows = by_group[g];
            if (test_rows.size() < want_test)
                test_rows.insert(test_rows.end(), rows.begin(), rows.end());
            else if (proxy_rows.size() < want_proxy)
                proxy_rows.insert(proxy_rows.end(), rows.begin(), rows.end());
            else if (labeled_rows.size() < want_labeled)
                labeled_rows.insert(labeled_rows.end(), rows.begin(), rows.end());
            else
                train_rows.insert(train_rows.end(), rows.begin(), rows.end());
        }
        if (train_rows.empty())
            throw std::invalid_argument("make_splits: no groups left for training");
    } else {
        std::vector<int> rows = data.all_rows();
        rng.shuffle(rows);
        auto n_d = static_cast<double>(data.n);
        std::size_t n_test = static_cast<std::size_t>(spec.test * n_d);
        std::size_t n_proxy = static_cast<std::size_t>(spec.proxy * n_d);
        std::size_t n_labeled = static_cast<std::size_t>(spec.labeled * n_d);
        auto it = rows.begin();
        test_rows.assign(it, it + static_cast<std::ptrdiff_t>(n_test));
        it += static_cast<std::ptrdiff_t>(n_test);
        proxy_rows.assign(it, it + static_cast<std::ptrdiff_t>(n_proxy));
        it += static_cast<std::ptrdiff_t>(n_proxy);
        labeled_rows.assign(it, it + static_cast<std::ptrdiff_t>(n_labeled));
        it += static_cast<std::ptrdiff_t>(n_labeled);
        train_rows.assign(it, rows.end());
    }

    if (spec.proxy_keep < 1.0) {
        auto keep = static_cast<std::size_t>(
            spec.proxy_keep * static_cast<double>(proxy_rows.size()));
        if (keep == 0 && !proxy_rows.empty()) keep = 1;
        proxy_rows.resize(keep);
    }

    std::sort(train_rows.begin(), train_rows.end());
    std::sort(proxy_rows.begin(), proxy_rows.end());
    std::sort(labeled_rows.begin(), labeled_rows.end());
    std::sort(test_rows.begin(), test_rows.end());

    Splits out{data.subset(train_rows), data.subset(proxy_rows), data.subset(labeled_rows),
               data.subset(test_rows)};
    out.proxy.labels.reset();  // proxy data is unlabeled downstream
    return out;
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

namespace {

void stats_for(const std::vector<double>& x, std::size_t n_rows, std::size_t d,
               std::vector<double>& mean, std::vector<double>& sd, bool& clamped) {
    mean.assign(d, 0.0);
    sd.assign(d, 0.0);
    if (n_rows == 0) {
        sd.assign(d, 1.0);
        return;
    }
    for (std::size_t i = 0; i < n_rows; ++i)
        for (std::size_t j = 0; j < d; ++j) mean[j] += x[i * d + j];
    for (double& v : mean) v /= static_cast<double>(n_rows);
    for (std::size_t i = 0; i < n_rows; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            double c = x[i * d + j] - mean[j];
            sd[j] += c * c;
        }
    for (double& v : sd) {
        v = std::sqrt(v / static_cast<double>(n_rows));
        if (v < 1e-12) {
            v = 1.0;
            clamped = true;
        }
    }
}

}  // namespace

NormStats compute_norm_stats(const MultimodalDataset& data) {
    NormStats s;
    stats_for(data.xa, data.n * data.t_seq, data.d_a, s.mean_a, s.std_a, s.clamped);
    stats_for(data.xb, data.n * data.t_seq, data.d_b, s.mean_b, s.std_b, s.clamped);
    return s;
}

void apply_norm(MultimodalDataset& data, const NormStats& stats) {
    if (stats.mean_a.size() != data.d_a || stats.mean_b.size() != data.d_b)
        throw ShapeError("apply_norm: stats dims do not match dataset dims");
    std::size_t rows = data.n * data.t_seq;
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < data.d_a; ++j)
            data.xa[i * data.d_a + j] = (data.xa[i * data.d_a + j] - stats.mean_a[j]) / stats.std_a[j];
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < data.d_b; ++j)
            data.xb[i * data.d_b + j] = (data.xb[i * data.d_b + j] - stats.mean_b[j]) / stats.std_b[j];
}

void invert_norm(MultimodalDataset& data, const NormStats& stats) {
    if (stats.mean_a.size() != data.d_a || stats.mean_b.size() != data.d_b)
        throw ShapeError("invert_norm: stats dims do not match dataset dims");
    std::size_t rows = data.n * data.t_seq;
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < data.d_a; ++j)
            data.xa[i * data.d_a + j] = data.xa[i * data.d_a + j] * stats.std_a[j] + stats.mean_a[j];
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < data.d_b; ++j)
            data.xb[i * data.d_b + j] = data.xb[i * data.d_b + j] * stats.std_b[j] + stats.mean_b[j];
}

}  // namespace fedmekt
