#include "expotion/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <mutex>
#include <thread>

#include "expotion/linalg.hpp"
#include "expotion/rng.hpp"
#include "json.hpp"

namespace expotion {

using json = nlohmann::json;

beat_grid extract_beats(const token_sequence& tokens) {
    beat_grid g;
    g.duration_s = tokens.duration_s();
    for (size_t i = 0; i < tokens.codes.size(); ++i)
        if (tokens.codes[i] == kBeatMarkerCode) g.times_s.push_back(double(i) / tokens.rate_hz);
    return g;
}

double estimate_tempo(const beat_grid& grid) {
    if (grid.times_s.size() < 2)
        throw undefined_tempo_error("estimate_tempo: need at least 2 beats, got " +
                                    std::to_string(grid.times_s.size()));
    std::vector<double> intervals(grid.times_s.size() - 1);
    for (size_t i = 1; i < grid.times_s.size(); ++i)
        intervals[i - 1] = grid.times_s[i] - grid.times_s[i - 1];
    std::sort(intervals.begin(), intervals.end());
    const size_t n = intervals.size();
    const double median =
        n % 2 == 1 ? intervals[n / 2] : 0.5 * (intervals[n / 2 - 1] + intervals[n / 2]);
    if (median <= 0.0) throw undefined_tempo_error("estimate_tempo: degenerate beat spacing");
    double bpm = 60.0 / median;
    while (bpm < 60.0) bpm *= 2.0;
    while (bpm >= 200.0) bpm /= 2.0;
    return bpm;
}

double tempo_error(double est_bpm, double ref_bpm) {
    if (est_bpm <= 0.0 || ref_bpm <= 0.0)
        throw validation_error("tempo_error: bpm values must be > 0");
    const double sqrt2 = std::sqrt(2.0);
    while (est_bpm < ref_bpm / sqrt2) est_bpm *= 2.0;
    while (est_bpm >= ref_bpm * sqrt2) est_bpm /= 2.0;
    return std::abs(est_bpm - ref_bpm);
}

beat_match_scores beat_f1(const beat_grid& est, const beat_grid& ref, double tolerance_s) {
    if (tolerance_s <= 0.0) throw validation_error("beat_f1: tolerance must be > 0");
    std::vector<char> used(est.times_s.size(), 0);
    int matched = 0;
    for (double r : ref.times_s) {
        int best = -1;
        double best_d = tolerance_s;
        for (size_t j = 0; j < est.times_s.size(); ++j) {
            if (used[j]) continue;
            const double d = std::abs(est.times_s[j] - r);
            if (d <= best_d && (best < 0 || d < best_d)) {
                best = int(j);
                best_d = d;
            }
        }
        if (best >= 0) {
            used[size_t(best)] = 1;
            ++matched;
        }
    }
    beat_match_scores s;
    if (!est.times_s.empty()) s.precision = double(matched) / double(est.times_s.size());
    if (!ref.times_s.empty()) s.recall = double(matched) / double(ref.times_s.size());
    if (s.precision + s.recall > 0.0)
        s.f1 = 2.0 * s.precision * s.recall / (s.precision + s.recall);
    return s;
}

double frechet_distance(const Mat<double>& a, const Mat<double>& b) {
    if (a.cols != b.cols)
        throw shape_error("frechet_distance: embedding dims differ, " + std::to_string(a.cols) +
                          " vs " + std::to_string(b.cols));
    if (a.rows < 2 || b.rows < 2)
        throw validation_error("frechet_distance: each set needs at least 2 rows");
    if (!a.all_finite() || !b.all_finite())
        throw validation_error("frechet_distance: non-finite input");

    ConstEigenMap<double> ea = as_eigen(a), eb = as_eigen(b);
    Eigen::VectorXd mu_a = ea.colwise().mean(), mu_b = eb.colwise().mean();
    Eigen::MatrixXd ca = ea.rowwise() - mu_a.transpose();
    Eigen::MatrixXd cb = eb.rowwise() - mu_b.transpose();
    Eigen::MatrixXd sa = ca.transpose() * ca / double(a.rows - 1);
    Eigen::MatrixXd sb = cb.transpose() * cb / double(b.rows - 1);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es_b(sb);
    Eigen::VectorXd root = es_b.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    Eigen::MatrixXd sqrt_b =
        es_b.eigenvectors() * root.asDiagonal() * es_b.eigenvectors().transpose();
    Eigen::MatrixXd m = sqrt_b * sa * sqrt_b;
    m = 0.5 * (m + m.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es_m(m);
    const double tr_sqrt = es_m.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();

    return (mu_a - mu_b).squaredNorm() + sa.trace() + sb.trace() - 2.0 * tr_sqrt;
}

double kl_divergence(const std::vector<double>& p, const std::vector<double>& q) {
    if (p.size() != q.size())
        throw validation_error("kl_divergence: length mismatch, " + std::to_string(p.size()) +
                               " vs " + std::to_string(q.size()));
    double acc = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        if (p[i] < 0.0 || q[i] < 0.0)
            throw validation_error("kl_divergence: negative probability");
        if (p[i] == 0.0) continue;
        const double qi = q[i] == 0.0 ? 1e-10 : q[i];
        acc += p[i] * std::log(p[i] / qi);
    }
    return acc;
}

double inception_score(const Mat<double>& class_probs) {
    if (class_probs.rows < 1 || class_probs.cols < 1)
        throw validation_error("inception_score: empty matrix");
    std::vector<double> marginal(size_t(class_probs.cols), 0.0);
    for (int i = 0; i < class_probs.rows; ++i) {
        const double* r = class_probs.row(i);
        double sum = 0.0;
        for (int j = 0; j < class_probs.cols; ++j) {
            if (r[j] < 0.0) throw validation_error("inception_score: negative probability");
            sum += r[j];
        }
        if (std::abs(sum - 1.0) > 1e-6)
            throw validation_error("inception_score: row " + std::to_string(i) +
                                   " sums to " + std::to_string(sum));
        for (int j = 0; j < class_probs.cols; ++j) marginal[size_t(j)] += r[j];
    }
    for (auto& m : marginal) m /= double(class_probs.rows);
    double mean_kl = 0.0;
    for (int i = 0; i < class_probs.rows; ++i) {
        const double* r = class_probs.row(i);
        mean_kl += kl_divergence(std::vector<double>(r, r + class_probs.cols), marginal);
    }
    return std::exp(mean_kl / double(class_probs.rows));
}

clip_embedder make_bigram_embedder(int dim, int vocab, uint64_t seed) {
    if (dim < 1 || vocab < 2)
        throw validation_error("make_bigram_embedder: dim >= 1 and vocab >= 2 required");
    return [dim, vocab, seed](const token_sequence& t) {
        std::vector<double> v(size_t(dim), 0.0);
        if (t.codes.size() < 2) return v;
        for (size_t i = 0; i + 1 < t.codes.size(); ++i) {
            const uint64_t key =
                uint64_t(t.codes[i]) * uint64_t(vocab) + uint64_t(t.codes[i + 1]);
            v[size_t(mix_seed(seed, key) % uint64_t(dim))] += 1.0;
        }
        const double total = double(t.codes.size() - 1);
        for (auto& x : v) x /= total;
        return v;
    };
}

clip_classifier make_caption_classifier(const std::vector<token_sequence>& refs,
                                        const std::vector<int>& caption_ids, int n_captions,
                                        int vocab) {
    if (refs.empty() || refs.size() != caption_ids.size())
        throw validation_error("make_caption_classifier: refs and caption ids must pair up");
    if (n_captions < 1 || vocab < 2)
        throw validation_error("make_caption_classifier: bad n_captions or vocab");

    const double alpha = 0.5;
    auto log_probs = std::make_shared<std::vector<std::vector<double>>>(
        size_t(n_captions), std::vector<double>(size_t(vocab) * size_t(vocab), 0.0));
    for (size_t r = 0; r < refs.size(); ++r) {
        const int c = caption_ids[r];
        if (c < 0 || c >= n_captions)
            throw validation_error("make_caption_classifier: caption id out of range");
        refs[r].validate(vocab);
        auto& counts = (*log_probs)[size_t(c)];
        for (size_t i = 0; i + 1 < refs[r].codes.size(); ++i)
            counts[size_t(refs[r].codes[i]) * size_t(vocab) + size_t(refs[r].codes[i + 1])] +=
                1.0;
    }
    for (auto& counts : *log_probs) {
        for (int a = 0; a < vocab; ++a) {
            double row_sum = 0.0;
            for (int b = 0; b < vocab; ++b) row_sum += counts[size_t(a) * size_t(vocab) + b];
            const double denom = row_sum + alpha * vocab;
            for (int b = 0; b < vocab; ++b) {
                auto& cell = counts[size_t(a) * size_t(vocab) + b];
                cell = std::log((cell + alpha) / denom);
            }
        }
    }

    return [log_probs, n_captions, vocab](const token_sequence& t) {
        std::vector<double> ll(size_t(n_captions), 0.0);
        if (t.codes.size() >= 2) {
            for (int c = 0; c < n_captions; ++c) {
                const auto& table = (*log_probs)[size_t(c)];
                double acc = 0.0;
                for (size_t i = 0; i + 1 < t.codes.size(); ++i)
                    acc += table[size_t(t.codes[i]) * size_t(vocab) + size_t(t.codes[i + 1])];
                ll[size_t(c)] = acc / double(t.codes.size() - 1);
            }
        }
        const double mx = *std::max_element(ll.begin(), ll.end());
        double sum = 0.0;
        for (auto& x : ll) {
            x = std::exp(x - mx);
            sum += x;
        }
        for (auto& x : ll) x /= sum;
        return ll;
    };
}

namespace {

token_sequence load_clip_tokens(const clip_manifest& man, const clip_manifest_entry& e) {
    token_sequence t = read_tokens(man.resolve(e.token_path), 1.0);
    if (e.duration_s <= 0.0 || t.codes.empty())
        throw validation_error("clip " + e.clip_id + ": cannot derive token rate");
    t.rate_hz = double(t.codes.size()) / e.duration_s;
    return t;
}

double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

} // namespace

eval_report evaluate_run(const clip_manifest& gen, const clip_manifest& ref,
                         const clip_embedder& embedder, const clip_classifier& classifier,
                         const eval_options& opts) {
    if (gen.entries.size() != ref.entries.size())
        throw pairing_error("evaluate_run: " + std::to_string(gen.entries.size()) +
                            " generated vs " + std::to_string(ref.entries.size()) +
                            " reference clips");
    const int n = int(gen.entries.size());
    if (n == 0) throw validation_error("evaluate_run: empty manifests");
    for (int i = 0; i < n; ++i)
        if (gen.entries[size_t(i)].clip_id != ref.entries[size_t(i)].clip_id)
            throw pairing_error("evaluate_run: clip id mismatch at position " +
                                std::to_string(i) + ": " + gen.entries[size_t(i)].clip_id +
                                " vs " + ref.entries[size_t(i)].clip_id);

    eval_report rep;
    rep.beat_tolerance_s = opts.beat_tolerance_s;
    rep.clips.resize(size_t(n));
    std::vector<std::vector<double>> gen_emb(static_cast<size_t>(n));
    std::vector<std::vector<double>> ref_emb(static_cast<size_t>(n));
    std::vector<std::vector<double>> gen_cls(static_cast<size_t>(n));
    std::vector<std::vector<double>> ref_cls(static_cast<size_t>(n));

    auto work = [&](int i) {
        const auto& ge = gen.entries[size_t(i)];
        const auto& re = ref.entries[size_t(i)];
        token_sequence gt = load_clip_tokens(gen, ge);
        token_sequence rt = load_clip_tokens(ref, re);

        clip_eval ce;
        ce.clip_id = ge.clip_id;
        beat_grid est = extract_beats(gt);
        beat_grid truth{re.beat_times_s, re.duration_s};
        truth.validate();
        try {
            ce.tempo_error_bpm = tempo_error(estimate_tempo(est), re.tempo_bpm);
            ce.tempo_defined = true;
        } catch (const undefined_tempo_error&) {
            ce.tempo_error_bpm = undefined_tempo_penalty(re.tempo_bpm);
            ce.tempo_defined = false;
        }
        beat_match_scores bm = beat_f1(est, truth, opts.beat_tolerance_s);
        ce.beat_precision = bm.precision;
        ce.beat_recall = bm.recall;
        ce.beat_f1 = bm.f1;
        rep.clips[size_t(i)] = std::move(ce);

        gen_emb[size_t(i)] = embedder(gt);
        ref_emb[size_t(i)] = embedder(rt);
        gen_cls[size_t(i)] = classifier(gt);
        ref_cls[size_t(i)] = classifier(rt);
    };

    const int jobs = std::max(1, opts.jobs);
    if (jobs == 1) {
        for (int i = 0; i < n; ++i) work(i);
    } else {
        std::mutex err_mu;
        std::exception_ptr first_err;
        std::vector<std::thread> pool;
        for (int w = 0; w < jobs; ++w)
            pool.emplace_back([&, w] {
                for (int i = w; i < n; i += jobs) {
                    try {
                        work(i);
                    } catch (...) {
                        std::lock_guard<std::mutex> lock(err_mu);
                        if (!first_err) first_err = std::current_exception();
                        return;
                    }
                }
            });
        for (auto& t : pool) t.join();
        if (first_err) std::rethrow_exception(first_err);
    }

    std::vector<double> tempo_errs;
    for (const auto& ce : rep.clips) {
        tempo_errs.push_back(ce.tempo_error_bpm);
        rep.mean_tempo_error_bpm += ce.tempo_error_bpm;
        rep.mean_beat_f1 += ce.beat_f1;
        if (!ce.tempo_defined) ++rep.n_undefined_tempo;
    }
    rep.mean_tempo_error_bpm /= n;
    rep.mean_beat_f1 /= n;
    rep.median_tempo_error_bpm = median_of(tempo_errs);

    const int emb_dim = int(gen_emb[0].size());
    const int n_classes = int(gen_cls[0].size());
    Mat<double> a(n, emb_dim), b(n, emb_dim), pg(n, n_classes);
    double kl_sum = 0.0;
    for (int i = 0; i < n; ++i) {
        std::copy(gen_emb[size_t(i)].begin(), gen_emb[size_t(i)].end(), a.row(i));
        std::copy(ref_emb[size_t(i)].begin(), ref_emb[size_t(i)].end(), b.row(i));
        std::copy(gen_cls[size_t(i)].begin(), gen_cls[size_t(i)].end(), pg.row(i));
        kl_sum += kl_divergence(gen_cls[size_t(i)], ref_cls[size_t(i)]);
    }
    rep.frechet = frechet_distance(a, b);
    rep.mean_kl = kl_sum / n;
    rep.inception = inception_score(pg);
    return rep;
}

std::string report_to_json(const eval_report& r) {
    json clips = json::array();
    for (const auto& c : r.clips)
        clips.push_back({{"clip_id", c.clip_id},
                         {"tempo_error_bpm", c.tempo_error_bpm},
                         {"tempo_defined", c.tempo_defined},
                         {"beat_precision", c.beat_precision},
                         {"beat_recall", c.beat_recall},
                         {"beat_f1", c.beat_f1}});
    json doc = {{"n_clips", int(r.clips.size())},
                {"beat_tolerance_s", r.beat_tolerance_s},
                {"clips", clips},
                {"aggregate",
                 {{"mean_tempo_error_bpm", r.mean_tempo_error_bpm},
                  {"median_tempo_error_bpm", r.median_tempo_error_bpm},
                  {"mean_beat_f1", r.mean_beat_f1},
                  {"frechet", r.frechet},
                  {"mean_kl", r.mean_kl},
                  {"inception_score", r.inception},
                  {"n_undefined_tempo", r.n_undefined_tempo}}}};
    return doc.dump(2) + "\n";
}

eval_report report_from_json(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& ex) {
        throw parse_error(std::string("eval report: ") + ex.what());
    }
    eval_report r;
    try {
        r.beat_tolerance_s = doc.at("beat_tolerance_s").get<double>();
        for (const auto& jc : doc.at("clips")) {
            clip_eval c;
            c.clip_id = jc.at("clip_id").get<std::string>();
            c.tempo_error_bpm = jc.at("tempo_error_bpm").get<double>();
            c.tempo_defined = jc.at("tempo_defined").get<bool>();
            c.beat_precision = jc.at("beat_precision").get<double>();
            c.beat_recall = jc.at("beat_recall").get<double>();
            c.beat_f1 = jc.at("beat_f1").get<double>();
            r.clips.push_back(std::move(c));
        }
        const auto& agg = doc.at("aggregate");
        r.mean_tempo_error_bpm = agg.at("mean_tempo_error_bpm").get<double>();
        r.median_tempo_error_bpm = agg.at("median_tempo_error_bpm").get<double>();
        r.mean_beat_f1 = agg.at("mean_beat_f1").get<double>();
        r.frechet = agg.at("frechet").get<double>();
        r.mean_kl = agg.at("mean_kl").get<double>();
        r.inception = agg.at("inception_score").get<double>();
        r.n_undefined_tempo = agg.at("n_undefined_tempo").get<int>();
        if (int(r.clips.size()) != doc.at("n_clips").get<int>())
            throw validation_error("eval report: n_clips does not match clip list");
    } catch (const json::exception& ex) {
        throw validation_error(std::string("eval report: ") + ex.what());
    }
    return r;
}

std::string render_report(const eval_report& r) {
    std::string out;
    char line[160];
    std::snprintf(line, sizeof(line), "%-12s %14s %9s %9s %9s\n", "clip", "tempo_err_bpm",
                  "precision", "recall", "beat_f1");
    out += line;
    for (const auto& c : r.clips) {
        std::snprintf(line, sizeof(line), "%-12s %14.3f%c %9.3f %9.3f %9.3f\n",
                      c.clip_id.c_str(), c.tempo_error_bpm, c.tempo_defined ? ' ' : '*',
                      c.beat_precision, c.beat_recall, c.beat_f1);
        out += line;
    }
    if (r.n_undefined_tempo > 0)
        out += "(* tempo undefined; worst-case folded error charged)\n";
    std::snprintf(line, sizeof(line),
                  "mean tempo error %.3f bpm | median %.3f bpm | mean beat F1 %.3f\n",
                  r.mean_tempo_error_bpm, r.median_tempo_error_bpm, r.mean_beat_f1);
    out += line;
    std::snprintf(line, sizeof(line), "frechet %.6f | mean KL %.6f | IS %.6f\n", r.frechet,
                  r.mean_kl, r.inception);
    out += line;
    return out;
}

} // namespace expotion
