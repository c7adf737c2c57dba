#include "ssda/trainer.hpp"

#include "ssda/errors.hpp"
#include "ssda/linalg.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

namespace ssda {

namespace {

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, Rng& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    const std::size_t take = std::min(n, k);
    for (std::size_t i = 0; i < take; ++i) {
        const std::size_t j = i + rng.uniform_index(n - i);
        std::swap(idx[i], idx[j]);
    }
    idx.resize(take);
    return idx;
}

Matrix gather_rows(const Matrix& m, const std::vector<std::size_t>& rows) {
    Matrix out(rows.size(), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) out(i, j) = m(rows[i], j);
    }
    return out;
}

std::vector<int> gather_labels(const std::vector<int>& labels, const std::vector<std::size_t>& rows) {
    std::vector<int> out(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) out[i] = labels[rows[i]];
    return out;
}

Vec uniform_marginal(std::size_t n) {
    return Vec(n, 1.0 / static_cast<double>(n));
}

void add_scaled(Matrix& dst, const Matrix& src, double scale) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst.data()[i] += scale * src.data()[i];
}

std::size_t class_count_of(const SsdaSplit& split) {
    int mx = -1;
    for (int y : split.source.labels) mx = std::max(mx, y);
    for (int y : split.target_labeled.labels) mx = std::max(mx, y);
    return static_cast<std::size_t>(mx + 1);
}

} // namespace

StepLossResult compute_step_loss(const Model& model, const PrototypeSet& prototypes,
                                 const StepBatch& batch, const TransportPlan* frozen_plan,
                                 const RunConfig& cfg, bool with_gradients) {
    StepLossResult result;

    FeatureExtractor::Cache fe_source, fe_labeled, fe_weak, fe_strong;
    LinearClassifier::Cache lc_source, lc_labeled, lc_weak, lc_strong;

    const Matrix f_source = model.extractor.forward(batch.source_inputs, &fe_source);
    const Matrix f_labeled = model.extractor.forward(batch.labeled_inputs, &fe_labeled);
    const Matrix f_weak = model.extractor.forward(batch.weak_inputs, &fe_weak);
    const Matrix f_strong = model.extractor.forward(batch.strong_inputs, &fe_strong);

    const Matrix p_source = model.classifier.forward(f_source, &lc_source);
    const Matrix p_labeled = model.classifier.forward(f_labeled, &lc_labeled);
    const Matrix p_weak = model.classifier.forward(f_weak, &lc_weak);
    const Matrix p_strong = model.classifier.forward(f_strong, &lc_strong);

    if (frozen_plan != nullptr) {
        result.plan = *frozen_plan;
    } else {
        TransportProblem problem;
        problem.cost = build_cost_matrix(prototypes, f_weak);
        problem.row_marginal = uniform_marginal(prototypes.class_count());
        problem.col_marginal = uniform_marginal(f_weak.rows());
        problem.epsilon = cfg.ot_epsilon;
        problem.max_iters = cfg.ot_max_iters;
        problem.tolerance = cfg.ot_tolerance;
        result.plan = solve_sinkhorn(problem);
    }

    const BaseLossResult base = base_loss(p_source, batch.source_labels, p_labeled,
                                          batch.labeled_labels, p_weak, p_strong, cfg.pseudo.tau1);
    result.fixmatch_passed = base.masked_in;

    LossComponents components;
    components.base = base.value;

    std::optional<IntraLossResult> intra;
    if (cfg.mask.intra && result.plan.converged) {
        intra = intra_loss(result.plan, f_strong, prototypes.matrix());
        components.intra = intra->value;
    }

    std::optional<InterAlignmentResult> inter;
    if (cfg.mask.inter) {
        inter = inter_alignment_loss(f_source, batch.source_labels, prototypes, cfg.sim,
                                     cfg.inter_norm_axis);
        components.inter = inter->value;
    }

    std::optional<DualConsistencyResult> dual;
    Matrix weak_sharp, strong_sharp, weak_sim, strong_sim;
    const bool batch_on = cfg.mask.batch && (cfg.mask.linear_branch || cfg.mask.prototype_branch);
    if (batch_on) {
        weak_sharp = sharpen_rows(p_weak, cfg.sharpen);
        strong_sharp = sharpen_rows(p_strong, cfg.sharpen);
        weak_sim = similarity_softmax_over_classes(prototypes, f_weak, cfg.sim);
        strong_sim = similarity_softmax_over_classes(prototypes, f_strong, cfg.sim);
        dual = dual_consistency_loss(weak_sharp, strong_sharp, weak_sim, strong_sim,
                                     cfg.mask.linear_branch, cfg.mask.prototype_branch);
        components.batch = dual->value;
    }

    result.report = total_loss(components, cfg.weights);
    result.weak_probs = p_weak;
    result.weak_features = f_weak;
    result.strong_features = f_strong;

    if (!with_gradients) return result;

    // dL/d(probs) and dL/d(features) per stream, lambda-weighted.
    Matrix d_p_source = base.d_source_probs;
    Matrix d_p_labeled = base.d_target_probs;
    Matrix d_p_weak(p_weak.rows(), p_weak.cols());
    Matrix d_p_strong = base.d_strong_probs;
    Matrix d_f_source(f_source.rows(), f_source.cols());
    Matrix d_f_labeled(f_labeled.rows(), f_labeled.cols());
    Matrix d_f_weak(f_weak.rows(), f_weak.cols());
    Matrix d_f_strong(f_strong.rows(), f_strong.cols());
    result.d_prototypes = Matrix(prototypes.class_count(), prototypes.feature_dim());

    if (intra.has_value()) {
        add_scaled(d_f_strong, intra->d_strong_features, cfg.weights.lambda_intra);
        add_scaled(result.d_prototypes, intra->d_prototypes, cfg.weights.lambda_intra);
    }
    if (inter.has_value()) {
        add_scaled(d_f_source, inter->d_source_features, cfg.weights.lambda_inter);
        add_scaled(result.d_prototypes, inter->d_prototypes, cfg.weights.lambda_inter);
    }
    if (dual.has_value()) {
        const double lb = cfg.weights.lambda_batch;
        Matrix up_ws = dual->d_weak_sharpened;
        Matrix up_ss = dual->d_strong_sharpened;
        for (double& v : up_ws.data()) v *= lb;
        for (double& v : up_ss.data()) v *= lb;
        add_scaled(d_p_weak, sharpen_rows_backward(p_weak, weak_sharp, up_ws, cfg.sharpen), 1.0);
        add_scaled(d_p_strong, sharpen_rows_backward(p_strong, strong_sharp, up_ss, cfg.sharpen), 1.0);

        Matrix up_wsim = dual->d_weak_similarity;
        Matrix up_ssim = dual->d_strong_similarity;
        for (double& v : up_wsim.data()) v *= lb;
        for (double& v : up_ssim.data()) v *= lb;
        const SimilarityBackward weak_chain = similarity_softmax_over_classes_backward(
            prototypes, f_weak, cfg.sim, weak_sim, up_wsim);
        const SimilarityBackward strong_chain = similarity_softmax_over_classes_backward(
            prototypes, f_strong, cfg.sim, strong_sim, up_ssim);
        add_scaled(d_f_weak, weak_chain.d_features, 1.0);
        add_scaled(d_f_strong, strong_chain.d_features, 1.0);
        add_scaled(result.d_prototypes, weak_chain.d_prototypes, 1.0);
        add_scaled(result.d_prototypes, strong_chain.d_prototypes, 1.0);
    }

    result.grads = ModelGradients::zeros_like(model);
    const auto through_classifier = [&](const LinearClassifier::Cache& cache, const Matrix& d_probs,
                                        Matrix& d_features) {
        const LinearClassifier::Gradients g = model.classifier.backward(cache, d_probs);
        result.grads.accumulate_classifier(g.w, g.b);
        add_scaled(d_features, g.d_features, 1.0);
    };
    through_classifier(lc_source, d_p_source, d_f_source);
    through_classifier(lc_labeled, d_p_labeled, d_f_labeled);
    through_classifier(lc_weak, d_p_weak, d_f_weak);
    through_classifier(lc_strong, d_p_strong, d_f_strong);

    result.grads.accumulate(model.extractor.backward(fe_source, d_f_source));
    result.grads.accumulate(model.extractor.backward(fe_labeled, d_f_labeled));
    result.grads.accumulate(model.extractor.backward(fe_weak, d_f_weak));
    result.grads.accumulate(model.extractor.backward(fe_strong, d_f_strong));

    result.report.gradients["source_probs"] = std::move(d_p_source);
    result.report.gradients["labeled_probs"] = std::move(d_p_labeled);
    result.report.gradients["weak_probs"] = std::move(d_p_weak);
    result.report.gradients["strong_probs"] = std::move(d_p_strong);
    result.report.gradients["source_features"] = std::move(d_f_source);
    result.report.gradients["labeled_features"] = std::move(d_f_labeled);
    result.report.gradients["weak_features"] = std::move(d_f_weak);
    result.report.gradients["strong_features"] = std::move(d_f_strong);
    result.report.gradients["prototypes"] = result.d_prototypes;
    return result;
}

namespace {

struct BranchStats {
    std::size_t confident = 0, confident_correct = 0;
    std::size_t ot = 0, ot_correct = 0;

    void add(const std::vector<PseudoLabelDecision>& decisions, const std::vector<int>& truths) {
        for (std::size_t i = 0; i < decisions.size(); ++i) {
            if (decisions[i].branch == PseudoLabelBranch::Confident) {
                ++confident;
                if (decisions[i].label == truths[i]) ++confident_correct;
            } else if (decisions[i].branch == PseudoLabelBranch::OtPlan) {
                ++ot;
                if (decisions[i].label == truths[i]) ++ot_correct;
            }
        }
    }
};

double ratio(std::size_t num, std::size_t den, double when_empty) {
    return den == 0 ? when_empty : static_cast<double>(num) / static_cast<double>(den);
}

void write_metrics_header(std::ostream& out) {
    out << "step,base,intra,inter,batch,total,overall_acc,mca,"
           "pl_cov_confident,pl_acc_confident,pl_cov_ot,pl_acc_ot,pl_cov_total,pl_acc_total,"
           "prototype_drift\n";
}

void write_metrics_row(std::ostream& out, const MetricsRecord& r) {
    out << r.step << ',' << format_double(r.base) << ',' << format_double(r.intra) << ','
        << format_double(r.inter) << ',' << format_double(r.batch) << ','
        << format_double(r.total) << ',' << format_double(r.overall_accuracy) << ','
        << format_double(r.mean_class_accuracy) << ',' << format_double(r.pl_coverage_confident)
        << ',' << format_double(r.pl_accuracy_confident) << ',' << format_double(r.pl_coverage_ot)
        << ',' << format_double(r.pl_accuracy_ot) << ',' << format_double(r.pl_coverage_total)
        << ',' << format_double(r.pl_accuracy_total) << ',' << format_double(r.prototype_drift)
        << '\n';
}

double prototype_drift(const Matrix& now, const Matrix& before) {
    double dist = 0.0;
    for (std::size_t k = 0; k < now.rows(); ++k) {
        dist += 1.0 - cosine_similarity(now.row(k), before.row(k));
    }
    return dist / static_cast<double>(now.rows());
}

void write_plan_csv(const std::string& path, const Matrix& plan) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("train: cannot open " + path);
    for (std::size_t i = 0; i < plan.rows(); ++i) {
        for (std::size_t j = 0; j < plan.cols(); ++j) {
            if (j > 0) out << ',';
            out << format_double(plan(i, j));
        }
        out << '\n';
    }
}

} // namespace

EvalScores evaluate_model(const Model& model, const Matrix& inputs, const std::vector<int>& labels) {
    if (inputs.rows() != labels.size()) {
        throw std::invalid_argument("evaluate_model: input/label count mismatch");
    }
    if (inputs.cols() != model.extractor.config().input_dim) {
        throw std::invalid_argument("evaluate_model: input dimension mismatch");
    }
    const Matrix probs = model.classifier.forward(model.extractor.forward(inputs));
    const std::size_t classes = model.classifier.class_count();
    std::vector<std::size_t> per_class_total(classes, 0), per_class_correct(classes, 0);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < inputs.rows(); ++i) {
        const auto row = probs.row(i);
        std::size_t arg = 0;
        for (std::size_t k = 1; k < classes; ++k) {
            if (row[k] > row[arg]) arg = k;
        }
        const auto y = static_cast<std::size_t>(labels[i]);
        if (y >= classes) throw std::invalid_argument("evaluate_model: label out of range");
        ++per_class_total[y];
        if (arg == y) {
            ++correct;
            ++per_class_correct[y];
        }
    }
    EvalScores scores;
    scores.overall = ratio(correct, inputs.rows(), 0.0);
    double mca = 0.0;
    std::size_t seen_classes = 0;
    for (std::size_t k = 0; k < classes; ++k) {
        if (per_class_total[k] == 0) continue;
        mca += ratio(per_class_correct[k], per_class_total[k], 0.0);
        ++seen_classes;
    }
    scores.mean_class_accuracy = seen_classes == 0 ? 0.0 : mca / static_cast<double>(seen_classes);
    return scores;
}

MetricsRecord evaluate(const std::string& checkpoint_path, const Matrix& unlabeled_inputs,
                       const EvalLabels& eval_labels) {
    const Model model = load_checkpoint(checkpoint_path);
    const EvalScores scores =
        evaluate_model(model, unlabeled_inputs, eval_labels.for_evaluation_only());
    MetricsRecord record;
    record.overall_accuracy = scores.overall;
    record.mean_class_accuracy = scores.mean_class_accuracy;
    return record;
}

TrainResult train(const RunConfig& cfg, const SsdaSplit& split, const StepObserver& observer) {
    validate(cfg);
    const std::size_t classes = class_count_of(split);
    if (classes < 2) throw ConfigError("train: need at least 2 classes in the data");
    if (split.target_unlabeled.rows() == 0) throw ConfigError("train: empty unlabeled target split");

    std::filesystem::create_directories(cfg.out_dir);
    const std::string metrics_path = cfg.out_dir + "/metrics.csv";
    const std::string pseudo_path = cfg.out_dir + "/pseudo_labels.csv";
    const std::string checkpoint_path = cfg.out_dir + "/checkpoint.bin";
    const std::string lastgood_path = cfg.out_dir + "/checkpoint_lastgood.bin";
    const std::string summary_path = cfg.out_dir + "/summary.json";
    const std::string plan_path = cfg.out_dir + "/plan_final.csv";

    std::ofstream metrics_out(metrics_path, std::ios::trunc);
    if (!metrics_out) throw IoError("train: cannot open " + metrics_path);
    write_metrics_header(metrics_out);
    std::ofstream pseudo_out(pseudo_path, std::ios::trunc);
    if (!pseudo_out) throw IoError("train: cannot open " + pseudo_path);
    pseudo_out << "epoch,sample_id,branch,assigned,true,confidence\n";

    MlpConfig mlp = cfg.mlp;
    mlp.input_dim = split.input_dim();
    Rng model_rng(derive_seed({cfg.seed, 0x111}));
    Model model(mlp, classes, model_rng);
    SgdOptimizer optimizer(cfg.sgd);

    PrototypeSet prototypes = PrototypeSet::init(
        model.extractor.forward(split.target_labeled.features), split.target_labeled.labels,
        classes, cfg.prototype_momentum);
    Matrix drift_reference = prototypes.matrix();

    // Extractor blocks at the base rate, the classifier head scaled.
    const std::vector<double> lr_scales{1.0, 1.0, 1.0, 1.0, cfg.sgd.classifier_lr_scale,
                                        cfg.sgd.classifier_lr_scale};

    Rng batch_rng(derive_seed({cfg.seed, 0x222}));
    const std::size_t steps_per_epoch =
        std::max<std::size_t>(1, (split.target_unlabeled.rows() + cfg.batch_unlabeled - 1) /
                                     cfg.batch_unlabeled);
    const auto& eval_truth = split.target_eval.for_evaluation_only();

    // Optional whole-split plan (ot.full_dataset): refreshed at the metrics
    // cadence on un-augmented features; batch columns are looked up by index.
    TransportPlan full_plan;
    bool full_plan_ready = false;
    auto refresh_full_plan = [&]() {
        TransportProblem problem;
        problem.cost = build_cost_matrix(prototypes, model.extractor.forward(split.target_unlabeled));
        problem.row_marginal = uniform_marginal(classes);
        problem.col_marginal = uniform_marginal(split.target_unlabeled.rows());
        problem.epsilon = cfg.ot_epsilon;
        problem.max_iters = cfg.ot_max_iters;
        problem.tolerance = cfg.ot_tolerance;
        full_plan = solve_sinkhorn(problem);
        full_plan_ready = true;
    };

    MetricsRecord last_record;
    std::string last_good;
    BranchStats window_stats;
    std::size_t window_samples = 0;

    auto emit_metrics = [&](std::size_t step, const LossReport& report) {
        MetricsRecord record;
        record.step = step;
        record.base = report.base;
        record.intra = report.intra;
        record.inter = report.inter;
        record.batch = report.batch;
        record.total = report.total;
        const EvalScores scores = evaluate_model(model, split.target_unlabeled, eval_truth);
        record.overall_accuracy = scores.overall;
        record.mean_class_accuracy = scores.mean_class_accuracy;
        record.pl_coverage_confident = ratio(window_stats.confident, window_samples, 0.0);
        record.pl_accuracy_confident = ratio(window_stats.confident_correct, window_stats.confident, 1.0);
        record.pl_coverage_ot = ratio(window_stats.ot, window_samples, 0.0);
        record.pl_accuracy_ot = ratio(window_stats.ot_correct, window_stats.ot, 1.0);
        record.pl_coverage_total = ratio(window_stats.confident + window_stats.ot, window_samples, 0.0);
        record.pl_accuracy_total = ratio(window_stats.confident_correct + window_stats.ot_correct,
                                         window_stats.confident + window_stats.ot, 1.0);
        record.prototype_drift = prototype_drift(prototypes.matrix(), drift_reference);
        drift_reference = prototypes.matrix();
        window_stats = BranchStats{};
        window_samples = 0;
        write_metrics_row(metrics_out, record);
        save_checkpoint(lastgood_path, model);
        last_good = lastgood_path;
        last_record = record;
        return record;
    };

    // Supervised-only warm-up: adaptation terms wait until the features carry
    // class structure, then the prototypes are initialized from them.
    const std::size_t warmup = std::min(cfg.warmup_steps, cfg.steps);
    RunConfig warm_cfg = cfg;
    warm_cfg.mask.intra = warm_cfg.mask.inter = warm_cfg.mask.batch = false;
    const TransportPlan no_plan; // unconverged placeholder used during warm-up

    LossReport last_report;
    TransportPlan last_plan;
    for (std::size_t step = 1; step <= cfg.steps; ++step) {
        const std::size_t epoch = (step - 1) / steps_per_epoch;
        const bool warming = step <= warmup;
        if (step == warmup + 1 && warmup > 0) {
            prototypes = PrototypeSet::init(
                model.extractor.forward(split.target_labeled.features), split.target_labeled.labels,
                classes, cfg.prototype_momentum);
            drift_reference = prototypes.matrix();
        }

        StepBatch batch;
        const auto source_idx =
            sample_without_replacement(split.source.features.rows(), cfg.batch_source, batch_rng);
        const auto labeled_idx = sample_without_replacement(split.target_labeled.features.rows(),
                                                            cfg.batch_labeled, batch_rng);
        const auto unlabeled_idx =
            sample_without_replacement(split.target_unlabeled.rows(), cfg.batch_unlabeled, batch_rng);
        batch.source_inputs = gather_rows(split.source.features, source_idx);
        batch.source_labels = gather_labels(split.source.labels, source_idx);
        batch.labeled_inputs = gather_rows(split.target_labeled.features, labeled_idx);
        batch.labeled_labels = gather_labels(split.target_labeled.labels, labeled_idx);
        const Matrix unlabeled_raw = gather_rows(split.target_unlabeled, unlabeled_idx);
        batch.weak_inputs = augment(unlabeled_raw, cfg.augment, AugmentStrength::Weak,
                                    derive_seed({cfg.seed, 0x333, step, 0}));
        batch.strong_inputs = augment(unlabeled_raw, cfg.augment, AugmentStrength::Strong,
                                      derive_seed({cfg.seed, 0x333, step, 1}));

        const TransportPlan* frozen = nullptr;
        TransportPlan sliced;
        if (warming) {
            frozen = &no_plan;
        } else if (cfg.ot_full_dataset) {
            if (!full_plan_ready || (step - 1) % cfg.metrics_every == 0) refresh_full_plan();
            sliced.converged = full_plan.converged;
            sliced.iterations_used = full_plan.iterations_used;
            sliced.row_residual = full_plan.row_residual;
            sliced.col_residual = full_plan.col_residual;
            sliced.plan = Matrix(classes, unlabeled_idx.size());
            for (std::size_t k = 0; k < classes; ++k) {
                for (std::size_t j = 0; j < unlabeled_idx.size(); ++j) {
                    sliced.plan(k, j) = full_plan.plan(k, unlabeled_idx[j]);
                }
            }
            frozen = &sliced;
        }

        StepLossResult step_loss =
            compute_step_loss(model, prototypes, batch, frozen, warming ? warm_cfg : cfg, true);
        if (!std::isfinite(step_loss.report.total)) {
            throw NumericError("train: non-finite loss at step " + std::to_string(step) +
                               "; last good checkpoint: " + (last_good.empty() ? "none" : last_good));
        }

        const std::vector<PseudoLabelDecision> decisions =
            batch_decide(step_loss.weak_probs, &step_loss.plan, cfg.pseudo);

        // Audit trail + rolling branch statistics (evaluation-only labels).
        const std::vector<int> truths = gather_labels(eval_truth, unlabeled_idx);
        window_stats.add(decisions, truths);
        window_samples += decisions.size();
        for (std::size_t i = 0; i < decisions.size(); ++i) {
            pseudo_out << epoch << ',' << unlabeled_idx[i] << ',' << to_string(decisions[i].branch)
                       << ',' << decisions[i].label << ',' << truths[i] << ','
                       << format_double(decisions[i].confidence) << '\n';
        }

        if (observer) {
            StepObservation obs{step,
                                epoch,
                                unlabeled_idx,
                                decisions,
                                step_loss.weak_probs,
                                step_loss.weak_features,
                                step_loss.plan,
                                prototypes};
            observer(obs);
        }

        try {
            optimizer.step(model.param_blocks(), step_loss.grads.blocks(), &lr_scales);
        } catch (const NumericError& e) {
            throw NumericError(std::string(e.what()) + " at step " + std::to_string(step) +
                               "; last good checkpoint: " + (last_good.empty() ? "none" : last_good));
        }

        if (!warming && cfg.mask.prototype_ema) {
            // Assign with the pre-update prototypes, then update at step end:
            // labeled batch features plus the pseudo-labeled weak features.
            std::vector<int> update_labels = batch.labeled_labels;
            std::vector<std::size_t> keep_rows;
            for (std::size_t i = 0; i < decisions.size(); ++i) {
                if (decisions[i].assigned()) {
                    keep_rows.push_back(i);
                    update_labels.push_back(decisions[i].label);
                }
            }
            Matrix update_features(batch.labeled_labels.size() + keep_rows.size(),
                                   prototypes.feature_dim());
            const Matrix f_labeled = model.extractor.forward(batch.labeled_inputs);
            for (std::size_t i = 0; i < f_labeled.rows(); ++i) {
                for (std::size_t j = 0; j < f_labeled.cols(); ++j) {
                    update_features(i, j) = f_labeled(i, j);
                }
            }
            for (std::size_t n = 0; n < keep_rows.size(); ++n) {
                for (std::size_t j = 0; j < prototypes.feature_dim(); ++j) {
                    update_features(f_labeled.rows() + n, j) = step_loss.weak_features(keep_rows[n], j);
                }
            }
            prototypes = ema_update(prototypes, update_features, update_labels);
        }
        if (!warming && cfg.route_prototype_gradients) {
            for (std::size_t k = 0; k < prototypes.class_count(); ++k) {
                Vec nudged(prototypes.feature_dim());
                for (std::size_t j = 0; j < prototypes.feature_dim(); ++j) {
                    nudged[j] = prototypes.matrix()(k, j) -
                                cfg.sgd.learning_rate * step_loss.d_prototypes(k, j);
                }
                prototypes.set_prototype(k, nudged);
            }
        }

        last_report = step_loss.report;
        last_plan = step_loss.plan;
        if (step % cfg.metrics_every == 0) emit_metrics(step, step_loss.report);
    }

    MetricsRecord final_record;
    if (cfg.steps == 0) {
        final_record = emit_metrics(0, LossReport{}); // initial evaluation only
    } else if (cfg.steps % cfg.metrics_every == 0) {
        final_record = last_record;
    } else {
        final_record = emit_metrics(cfg.steps, last_report);
    }

    save_checkpoint(checkpoint_path, model);
    if (!last_plan.plan.empty()) write_plan_csv(plan_path, last_plan.plan);

    nlohmann::ordered_json summary;
    summary["config_hash"] = config_hash(cfg);
    summary["seed"] = cfg.seed;
    summary["steps"] = cfg.steps;
    summary["final"] = {
        {"step", final_record.step},
        {"base", final_record.base},
        {"intra", final_record.intra},
        {"inter", final_record.inter},
        {"batch", final_record.batch},
        {"total", final_record.total},
        {"overall_accuracy", final_record.overall_accuracy},
        {"mean_class_accuracy", final_record.mean_class_accuracy},
        {"prototype_drift", final_record.prototype_drift},
    };
    summary["artifacts"] = {
        {"metrics", metrics_path},
        {"pseudo_labels", pseudo_path},
        {"checkpoint", checkpoint_path},
        {"final_plan", plan_path},
    };
    std::ofstream summary_out(summary_path, std::ios::trunc);
    if (!summary_out) throw IoError("train: cannot open " + summary_path);
    summary_out << summary.dump(2) << '\n';

    TrainResult result;
    result.final_metrics = final_record;
    result.checkpoint_path = checkpoint_path;
    result.metrics_path = metrics_path;
    result.summary_path = summary_path;
    result.pseudo_labels_path = pseudo_path;
    return result;
}

TrainResult train(const RunConfig& cfg, const StepObserver& observer) {
    validate(cfg);
    SsdaSplit split;
    if (!cfg.csv_path.empty()) {
        split = load_csv(cfg.csv_path);
    } else {
        DomainScenario scenario = cfg.scenario;
        scenario.seed = derive_seed({cfg.seed, 0xda7a});
        split = generate(scenario);
    }
    return train(cfg, split, observer);
}

// ---------------------------------------------------------------------------
// Suites
// ---------------------------------------------------------------------------

namespace {

struct SeedStats {
    double mean = 0.0;
    double stddev = 0.0;
};

SeedStats mean_stddev(const std::vector<double>& xs) {
    SeedStats s;
    if (xs.empty()) return s;
    for (double x : xs) s.mean += x;
    s.mean /= static_cast<double>(xs.size());
    if (xs.size() > 1) {
        double acc = 0.0;
        for (double x : xs) acc += (x - s.mean) * (x - s.mean);
        s.stddev = std::sqrt(acc / static_cast<double>(xs.size() - 1));
    }
    return s;
}

SuiteRow run_suite_row(const RunConfig& base_cfg, const std::string& label, const AblationMask& mask,
                       const std::vector<std::uint64_t>& seeds, const std::string& subdir) {
    SuiteRow row;
    row.label = label;
    row.mask = mask;
    std::vector<double> mcas, overalls;
    for (std::uint64_t seed : seeds) {
        RunConfig cfg = base_cfg;
        cfg.mask = mask;
        cfg.seed = seed;
        cfg.out_dir = base_cfg.out_dir + "/" + subdir + "/seed" + std::to_string(seed);
        if (mcas.empty()) row.config_hash = config_hash(cfg);
        const TrainResult result = train(cfg);
        mcas.push_back(result.final_metrics.mean_class_accuracy);
        overalls.push_back(result.final_metrics.overall_accuracy);
    }
    const SeedStats mca = mean_stddev(mcas);
    const SeedStats overall = mean_stddev(overalls);
    row.mean_mca = mca.mean;
    row.std_mca = mca.stddev;
    row.mean_overall = overall.mean;
    row.std_overall = overall.stddev;
    return row;
}

} // namespace

std::vector<SuiteRow> ablation_suite(const RunConfig& cfg, const std::vector<std::uint64_t>& seeds) {
    std::vector<SuiteRow> rows;
    // The 8 loss-term combinations.
    for (int bits = 0; bits < 8; ++bits) {
        AblationMask mask;
        mask.intra = (bits & 1) != 0;
        mask.inter = (bits & 2) != 0;
        mask.batch = (bits & 4) != 0;
        std::string label = "loss:";
        label += mask.intra ? "intra+" : "-----+";
        label += mask.inter ? "inter+" : "-----+";
        label += mask.batch ? "batch" : "-----";
        rows.push_back(run_suite_row(cfg, label, mask, seeds, "ablate/loss" + std::to_string(bits)));
    }
    // Prototype-branch masks: halves of the dual consistency and the EMA.
    struct ProtoRow {
        const char* label;
        bool linear, proto, ema;
    };
    const ProtoRow proto_rows[] = {
        {"proto:linear_only", true, false, false},
        {"proto:proto+ema", false, true, true},
        {"proto:linear+ema", true, false, true},
        {"proto:linear+proto", true, true, false},
        {"proto:all", true, true, true},
    };
    int idx = 0;
    for (const auto& pr : proto_rows) {
        AblationMask mask; // all losses on
        mask.linear_branch = pr.linear;
        mask.prototype_branch = pr.proto;
        mask.prototype_ema = pr.ema;
        rows.push_back(run_suite_row(cfg, pr.label, mask, seeds, "ablate/proto" + std::to_string(idx++)));
    }
    return rows;
}

std::vector<Tau2Point> tau2_sweep(const RunConfig& cfg, const std::vector<double>& values,
                                  const std::vector<std::uint64_t>& seeds) {
    for (double v : values) {
        if (v < 0.0 || v > cfg.pseudo.tau1) {
            throw ConfigError("tau2_sweep: values must lie in [0, tau1]");
        }
    }
    std::vector<double> all = values;
    // Always include the no-OT control point tau2 == tau1.
    if (std::find(all.begin(), all.end(), cfg.pseudo.tau1) == all.end()) {
        all.push_back(cfg.pseudo.tau1);
    }
    std::vector<Tau2Point> points;
    int idx = 0;
    for (double tau2 : all) {
        for (std::uint64_t seed : seeds) {
            RunConfig run = cfg;
            run.pseudo.tau2 = tau2;
            run.seed = seed;
            run.out_dir = cfg.out_dir + "/tau2_" + std::to_string(idx) + "/seed" + std::to_string(seed);
            const TrainResult result = train(run);
            Tau2Point p;
            p.tau2 = tau2;
            p.control = tau2 == cfg.pseudo.tau1;
            p.seed = seed;
            p.mca = result.final_metrics.mean_class_accuracy;
            p.overall = result.final_metrics.overall_accuracy;
            points.push_back(p);
        }
        ++idx;
    }
    return points;
}

ShotsSweepResult shots_sweep(const RunConfig& cfg, const std::vector<std::size_t>& shot_counts,
                             const std::vector<std::uint64_t>& seeds) {
    for (std::size_t s : shot_counts) {
        if (s < 1) throw ConfigError("shots_sweep: shot counts must be >= 1");
    }
    ShotsSweepResult result;
    std::vector<double> xs, ys;
    for (std::size_t shots : shot_counts) {
        std::vector<double> mcas;
        for (std::uint64_t seed : seeds) {
            RunConfig run = cfg;
            run.scenario.shots = shots;
            run.batch_labeled = std::max<std::size_t>(run.batch_labeled,
                                                      shots * run.scenario.class_count);
            run.seed = seed;
            run.out_dir = cfg.out_dir + "/shots_" + std::to_string(shots) + "/seed" + std::to_string(seed);
            const TrainResult trained = train(run);
            ShotsPoint p;
            p.shots = shots;
            p.seed = seed;
            p.mca = trained.final_metrics.mean_class_accuracy;
            p.overall = trained.final_metrics.overall_accuracy;
            result.points.push_back(p);
            mcas.push_back(p.mca);
        }
        xs.push_back(static_cast<double>(shots));
        ys.push_back(mean_stddev(mcas).mean);
    }
    result.spearman_rho = spearman_rho(xs, ys);
    return result;
}

PseudoStrategyStudy pseudo_label_strategy_study(const RunConfig& cfg,
                                                const std::vector<std::uint64_t>& seeds) {
    struct Tally {
        std::size_t assigned = 0, correct = 0, total = 0;
        StrategyScore score() const {
            StrategyScore s;
            s.coverage = total == 0 ? 0.0 : static_cast<double>(assigned) / static_cast<double>(total);
            s.accuracy = assigned == 0 ? 1.0 : static_cast<double>(correct) / static_cast<double>(assigned);
            return s;
        }
    };
    Tally ours, linear, proto;

    for (std::uint64_t seed : seeds) {
        RunConfig run = cfg;
        run.seed = seed;
        run.out_dir = cfg.out_dir + "/plstudy/seed" + std::to_string(seed);

        SsdaSplit split;
        if (!run.csv_path.empty()) {
            split = load_csv(run.csv_path);
        } else {
            DomainScenario scenario = run.scenario;
            scenario.seed = derive_seed({run.seed, 0xda7a});
            split = generate(scenario);
        }
        const auto& truth_all = split.target_eval.for_evaluation_only();

        auto observer = [&](const StepObservation& obs) {
            if (!obs.plan.converged) return; // warm-up or a failed batch: no rule has a plan
            const std::vector<int> truths = gather_labels(truth_all, obs.unlabeled_indices);
            // Ours: the decisions as made by the trainer.
            for (std::size_t i = 0; i < obs.decisions.size(); ++i) {
                ++ours.total;
                if (obs.decisions[i].assigned()) {
                    ++ours.assigned;
                    if (obs.decisions[i].label == truths[i]) ++ours.correct;
                }
            }
            // Variants share branch 1 + the abstain band and differ only in
            // how the middle band is labeled.
            const Matrix sim = similarity_softmax_over_classes(obs.prototypes, obs.weak_features,
                                                               cfg.sim);
            for (std::size_t i = 0; i < obs.decisions.size(); ++i) {
                const auto row = obs.weak_probs.row(i);
                std::size_t arg = 0;
                for (std::size_t k = 1; k < row.size(); ++k) {
                    if (row[k] > row[arg]) arg = k;
                }
                const double conf = row[arg];
                ++linear.total;
                ++proto.total;
                if (conf >= cfg.pseudo.tau1) {
                    ++linear.assigned;
                    ++proto.assigned;
                    if (static_cast<int>(arg) == truths[i]) {
                        ++linear.correct;
                        ++proto.correct;
                    }
                } else if (conf >= cfg.pseudo.tau2) {
                    ++linear.assigned;
                    if (static_cast<int>(arg) == truths[i]) ++linear.correct;
                    const auto srow = sim.row(i);
                    std::size_t parg = 0;
                    for (std::size_t k = 1; k < srow.size(); ++k) {
                        if (srow[k] > srow[parg]) parg = k;
                    }
                    ++proto.assigned;
                    if (static_cast<int>(parg) == truths[i]) ++proto.correct;
                }
            }
        };
        train(run, split, observer);
    }

    PseudoStrategyStudy study;
    study.ours = ours.score();
    study.linear_only = linear.score();
    study.prototype_only = proto.score();
    return study;
}

double spearman_rho(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) {
        throw std::invalid_argument("spearman_rho: need two same-length series of length >= 2");
    }
    auto ranks = [](const std::vector<double>& v) {
        const std::size_t n = v.size();
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
        std::vector<double> r(n);
        std::size_t i = 0;
        while (i < n) {
            std::size_t j = i;
            while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
            const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
            for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
            i = j + 1;
        }
        return r;
    };
    const std::vector<double> rx = ranks(x);
    const std::vector<double> ry = ranks(y);
    const std::size_t n = x.size();
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

} // namespace ssda
