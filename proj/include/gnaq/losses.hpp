#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "gnaq/errors.hpp"

namespace gnaq {

// log(1 + e^x) without overflow for large |x|.
inline double softplus(double x) {
    if (x > 0.0) return x + std::log1p(std::exp(-x));
    return std::log1p(std::exp(x));
}

// 1 / (1 + e^-x), saturating cleanly at both tails.
inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// Pairwise preference loss over (score_pos, score_neg) pairs:
//   sum softplus(-(s_pos - s_neg)) + lambda_reg * reg_norm_sq
// reg_norm_sq is the squared L2 norm of the touched parameters; its gradient
// with respect to those parameters is the caller's concern. grad outputs are
// d/ds_pos and d/ds_neg per pair.
struct BprResult {
    double loss = 0.0;  // includes the regularization term
    double reg = 0.0;   // the lambda_reg * reg_norm_sq part alone
    std::vector<double> grad_pos;
    std::vector<double> grad_neg;
};

inline BprResult bpr_loss(std::span<const double> score_pos,
                          std::span<const double> score_neg, double reg_norm_sq,
                          double lambda_reg) {
    if (score_pos.size() != score_neg.size())
        throw InputError("bpr_loss: score arrays differ in length");
    BprResult r;
    r.grad_pos.resize(score_pos.size());
    r.grad_neg.resize(score_pos.size());
    for (std::size_t k = 0; k < score_pos.size(); ++k) {
        const double x = score_pos[k] - score_neg[k];
        r.loss += softplus(-x);  // -ln sigmoid(x)
        const double g = sigmoid(-x);
        r.grad_pos[k] = -g;
        r.grad_neg[k] = g;
    }
    r.reg = lambda_reg * reg_norm_sq;
    r.loss += r.reg;
    return r;
}

// Listwise rank loss over one ranking list: for every ordered pair (i, j)
// with relevance[i] > relevance[j],
//   loss += softplus(-(scores[i] - scores[j]))
// Pairs with equal or inverted relevance contribute nothing (their mirror
// pair carries the term). grad[k] = dL/dscores[k].
struct LambdaResult {
    double loss = 0.0;
    std::vector<double> grad;
};

inline LambdaResult lambda_loss(std::span<const double> scores,
                                std::span<const int> relevance) {
    if (scores.size() != relevance.size())
        throw InputError("lambda_loss: scores and relevance differ in length");
    if (scores.size() < 2) throw InputError("lambda_loss: need at least 2 items");
    LambdaResult r;
    r.grad.assign(scores.size(), 0.0);
    for (std::size_t i = 0; i < scores.size(); ++i) {
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (relevance[i] <= relevance[j]) continue;
            const double x = scores[i] - scores[j];
            r.loss += softplus(-x);
            const double g = sigmoid(-x);
            r.grad[i] -= g;
            r.grad[j] += g;
        }
    }
    return r;
}

// total = bpr + lambda; reg is already folded into bpr and reported
// separately for logging.
struct LossBreakdown {
    double bpr = 0.0;
    double lambda = 0.0;
    double reg = 0.0;
    double total = 0.0;
};

inline LossBreakdown combined_loss(double bpr_with_reg, double lambda_sum, double reg_part) {
    LossBreakdown b;
    b.bpr = bpr_with_reg;
    b.lambda = lambda_sum;
    b.reg = reg_part;
    b.total = b.bpr + b.lambda;
    return b;
}

}  // namespace gnaq
