#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace cmr {

enum class Family { gaussian, binomial, multinomial };

const char* to_string(Family family);

// Checks the response range against the family: binomial needs {0,1},
// multinomial needs integer labels in [0, classes).
void check_response(const Eigen::VectorXd& response, Family family, int classes = 0);

struct FitInfo {
    std::string learner_id;
    Family family = Family::gaussian;
    std::size_t n_train = 0;
    int iterations = 0;
    std::optional<double> lambda;
    std::optional<double> cv_risk;
    std::optional<double> kkt_violation;   // lasso only, on the standardized scale
    std::optional<double> max_gradient;    // glm only, mean log-likelihood scale
    std::vector<std::string> members;       // stacking candidates in canonical order
    std::vector<double> weights;            // stacking weights aligned to members
    std::vector<double> member_risks;       // held-out risk of each candidate
    std::vector<std::string> warnings;
};

// Prediction contract shared by every learner. predict() returns the
// conditional mean (gaussian) or P(Y = 1) (binomial); predict_proba()
// returns class probabilities whose rows sum to one. Probabilities are not
// clipped here; consumers clip at use.
class FittedModel {
public:
    virtual ~FittedModel() = default;

    virtual Eigen::VectorXd predict(const Eigen::MatrixXd& design) const = 0;
    virtual Eigen::MatrixXd predict_proba(const Eigen::MatrixXd& design) const;
    virtual int classes() const { return info_.family == Family::gaussian ? 0 : 2; }

    const FitInfo& info() const { return info_; }

protected:
    FitInfo info_;
};

using ModelPtr = std::shared_ptr<const FittedModel>;

// Linear predictor model: identity link for gaussian, logit for binomial.
class LinearModel final : public FittedModel {
public:
    LinearModel(Eigen::VectorXd coefficients, FitInfo info);
    Eigen::VectorXd predict(const Eigen::MatrixXd& design) const override;
    const Eigen::VectorXd& coefficients() const { return coefficients_; }

private:
    Eigen::VectorXd coefficients_;
};

// Softmax over K classes; column 0 (the reference class) is fixed at zero.
class MultinomialModel final : public FittedModel {
public:
    MultinomialModel(Eigen::MatrixXd coefficients, FitInfo info);
    // P(class 1) when K == 2; throws otherwise.
    Eigen::VectorXd predict(const Eigen::MatrixXd& design) const override;
    Eigen::MatrixXd predict_proba(const Eigen::MatrixXd& design) const override;
    int classes() const override { return static_cast<int>(coefficients_.cols()); }
    const Eigen::MatrixXd& coefficients() const { return coefficients_; }

private:
    Eigen::MatrixXd coefficients_;   // p x K
};

// Single hidden layer with logistic activations.
class NeuralNetModel final : public FittedModel {
public:
    struct Weights {
        Eigen::VectorXd input_center, input_scale;   // per design column; scale 0 marks a dropped column
        Eigen::MatrixXd hidden;                      // inputs x hidden
        Eigen::RowVectorXd hidden_bias;
        Eigen::MatrixXd output;                      // hidden x outputs
        Eigen::RowVectorXd output_bias;
        double response_center = 0.0, response_scale = 1.0;   // gaussian only
    };
    NeuralNetModel(Weights weights, FitInfo info);
    Eigen::VectorXd predict(const Eigen::MatrixXd& design) const override;
    Eigen::MatrixXd predict_proba(const Eigen::MatrixXd& design) const override;
    int classes() const override;
    const Weights& weights() const { return weights_; }

private:
    Eigen::MatrixXd forward(const Eigen::MatrixXd& design) const;
    Weights weights_;
};

// Convex combination of member predictions.
class StackedModel final : public FittedModel {
public:
    StackedModel(std::vector<ModelPtr> members, std::vector<double> weights, FitInfo info);
    Eigen::VectorXd predict(const Eigen::MatrixXd& design) const override;
    const std::vector<ModelPtr>& members() const { return members_; }
    const std::vector<double>& weights() const { return weights_; }

private:
    std::vector<ModelPtr> members_;
    std::vector<double> weights_;
};

// ---------------------------------------------------------------- glm

struct GlmOptions {
    int max_iterations = 100;
    double deviance_tolerance = 1e-10;
    double gradient_tolerance = 1e-8;
    bool ridge_fallback = true;
    double ridge = 1e-8;
    double separation_bound = 30.0;
};

// IRLS / Newton fit of a canonical-link GLM. The design carries its own
// intercept column. Throws NumericalError("separation") when a binomial
// coefficient exceeds the separation bound while iterating.
std::shared_ptr<const LinearModel> fit_glm(const Eigen::MatrixXd& design, const Eigen::VectorXd& response,
                                           Family family, const Eigen::VectorXd* weights = nullptr,
                                           const GlmOptions& options = {});

// ---------------------------------------------------------------- lasso

struct LassoOptions {
    std::vector<double> lambda_grid;   // decreasing; empty = automatic path
    int n_lambda = 100;
    double lambda_min_ratio = 1e-3;
    int cv_folds = 10;
    bool standardize = true;
    double tolerance = 1e-13;
    int max_sweeps = 100000;
    std::uint64_t seed = 0;
};

// Smallest lambda that zeroes every slope (standardized scale if requested).
// Column 0 must be the intercept.
double lasso_lambda_max(const Eigen::MatrixXd& design, const Eigen::VectorXd& response, bool standardize);

// L1-penalized gaussian/binomial GLM by covariance-mode coordinate descent.
// A single-element grid fits that lambda directly; otherwise lambda is
// chosen by minimum cross-validated deviance. Objective is
// -loglik/n + lambda * sum |beta_j| with the intercept unpenalized.
std::shared_ptr<const LinearModel> fit_lasso(const Eigen::MatrixXd& design, const Eigen::VectorXd& response,
                                             Family family, const LassoOptions& options = {});

// ---------------------------------------------------------------- multinomial

struct MultinomialOptions {
    bool penalized = false;             // false: unpenalized Newton
    std::vector<double> lambda_grid;    // penalized only; empty = automatic path + CV
    int n_lambda = 100;
    double lambda_min_ratio = 1e-3;
    int cv_folds = 10;
    int max_iterations = 100;
    double tolerance = 1e-10;
    std::uint64_t seed = 0;
};

// labels hold class indices 0..classes-1; every class must be present.
std::shared_ptr<const MultinomialModel> fit_multinomial(const Eigen::MatrixXd& design, const std::vector<int>& labels,
                                                        int classes, const MultinomialOptions& options = {});

// ---------------------------------------------------------------- nnet

struct NnetOptions {
    int hidden_units = 3;
    int iterations = 100;        // BFGS iterations
    double tolerance = 1e-8;     // stop on relative loss change below this
    double init_range = 0.5;
    std::uint64_t seed = 0;
};

std::shared_ptr<const NeuralNetModel> fit_nnet(const Eigen::MatrixXd& design, const Eigen::VectorXd& response,
                                               Family family, const NnetOptions& options);

// Softmax-output network for class labels 0..classes-1.
std::shared_ptr<const NeuralNetModel> fit_nnet_multiclass(const Eigen::MatrixXd& design, const std::vector<int>& labels,
                                                          int classes, const NnetOptions& options);

// ---------------------------------------------------------------- stacking

enum class StackPolicy { convex_stack, discrete_select };

// A candidate learner: one of the built-ins, or a name registered with
// register_learner().
struct CandidateSpec {
    std::string kind = "glm";   // mean | glm | lasso | nnet | <registered>
    int hidden_units = 3;
    int lasso_cv_folds = 10;

    std::string id() const;
    // "glm", "lasso", "nnet", "nnet:5", "mean", or a registered name.
    static CandidateSpec parse(const std::string& text);
};

struct LearnerSpec {
    std::vector<CandidateSpec> candidates{CandidateSpec{}};
    StackPolicy policy = StackPolicy::convex_stack;
    int cv_folds = 10;

    void validate() const;
    std::string describe() const;   // "glm, lasso, nnet"
};

using LearnerFactory = std::function<ModelPtr(const Eigen::MatrixXd& design, const Eigen::VectorXd& response,
                                              Family family, std::uint64_t seed)>;

// Custom learners plug in by name. Factories must be pure functions of
// their arguments for results to stay reproducible.
void register_learner(const std::string& name, LearnerFactory factory);
bool is_registered_learner(const std::string& name);

ModelPtr fit_candidate(const CandidateSpec& candidate, const Eigen::MatrixXd& design,
                       const Eigen::VectorXd& response, Family family, std::uint64_t seed);

// Held-out risk used for stacking: mean squared error (gaussian) or mean
// negative log-likelihood (binomial).
double stacking_risk(const Eigen::VectorXd& prediction, const Eigen::VectorXd& response, Family family);

// Minimizes stacking_risk(Z w, y) over the probability simplex by
// exponentiated gradient; returns the better of that solution and the best
// vertex.
std::vector<double> simplex_weights(const Eigen::MatrixXd& heldout_predictions, const Eigen::VectorXd& response,
                                    Family family, double tolerance = 1e-8, int max_iterations = 10000);

// Super learner over spec.candidates with V-fold cross-validation.
ModelPtr fit_super_learner(const LearnerSpec& spec, const Eigen::MatrixXd& design, const Eigen::VectorXd& response,
                           Family family, std::uint64_t seed);

// Fold index per row: a seeded permutation dealt round-robin, stratified by
// response class when `stratify` is set.
std::vector<int> cv_fold_ids(const Eigen::VectorXd& response, int folds, std::uint64_t seed, bool stratify);

} // namespace cmr
