#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "qtart/dataset.hpp"
#include "qtart/model.hpp"

namespace qtart {

enum class AttackKind { fgsm, ffgsm, pgd, mifgsm };

std::string to_string(AttackKind k);
AttackKind parse_attack_kind(const std::string& name);

/// l-infinity attack in pixel space. The model applies its own
/// normalization, so eps and step are in pixel units.
struct AttackSpec {
    AttackKind kind = AttackKind::fgsm;
    double eps = 8.0 / 255.0;
    double step = 2.0 / 255.0;  // unused by fgsm
    std::size_t steps = 1;
    double decay = 1.0;          // mifgsm
    bool random_init = false;    // pgd
    std::uint64_t seed = 0;
    float lo = 0.0F;
    float hi = 1.0F;

    void validate() const;
    /// Short display name, e.g. "PGD20".
    std::string name() const;

    static AttackSpec fgsm(double eps);
    static AttackSpec ffgsm(double eps = 8.0 / 255.0, double step = 10.0 / 255.0);
    static AttackSpec pgd(double eps = 0.031, double step = 0.031 / 4.0, std::size_t steps = 20, bool random_init = true);
    static AttackSpec mifgsm(double eps = 8.0 / 255.0, double step = 2.0 / 255.0, double decay = 1.0,
                             std::size_t steps = 5);
};

/// Gradient of the mean cross-entropy with respect to the pixel-space batch.
std::vector<float> input_gradient(const Model& model, const Tensor& x, std::span<const int> labels);

/// Clamps `adv` into the eps-ball around `x` and then into [lo, hi].
void project_linf(Tensor& adv, const Tensor& x, double eps, float lo = 0.0F, float hi = 1.0F);

/// g <- decay * g + grad / ||grad||_1, per sample of `per_sample` values.
/// A sample with a zero gradient leaves only the decayed accumulator.
void momentum_accumulate(std::span<float> acc, std::span<const float> grad, std::size_t per_sample, double decay);

Tensor fgsm(const Model& model, const Tensor& x, std::span<const int> labels, double eps, float lo = 0.0F,
            float hi = 1.0F);

/// `key` separates the random streams of different batches.
Tensor ffgsm(const Model& model, const Tensor& x, std::span<const int> labels, const AttackSpec& spec,
             std::uint64_t key = 0);
Tensor pgd(const Model& model, const Tensor& x, std::span<const int> labels, const AttackSpec& spec,
           std::uint64_t key = 0);
Tensor mifgsm(const Model& model, const Tensor& x, std::span<const int> labels, const AttackSpec& spec);

/// Dispatches on spec.kind.
Tensor attack(const Model& model, const Tensor& x, std::span<const int> labels, const AttackSpec& spec,
              std::uint64_t key = 0);

/// Accuracy (%) of `target` on adversaries crafted with `source` gradients.
double evaluate_transfer(const Model& source, const Model& target, const Dataset& test, const AttackSpec& spec,
                         std::size_t batch_size = 128);

/// Accuracy (%) on the attacked test set (same-source).
double evaluate_robustness(const Model& model, const Dataset& test, const AttackSpec& spec,
                           std::size_t batch_size = 128);

struct TransferMatrix {
    std::vector<std::string> sources;
    std::string target;
    std::vector<double> accuracy;  // per source, %
    double mean = 0.0;
    double stddev = 0.0;           // population
    bool includes_self = true;

    /// Recomputes mean and stddev from `accuracy`.
    void summarize();
};

/// Per-source adversarial accuracy on `target`. Every listed source counts
/// toward mean/stddev, including the target itself when listed.
TransferMatrix transfer_eval(const Model& target, std::span<const Model* const> sources,
                             std::span<const std::string> source_names, const Dataset& test, const AttackSpec& spec,
                             std::string target_name = "target", std::size_t batch_size = 128);

}  // namespace qtart
