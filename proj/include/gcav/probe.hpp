#pragma once

#include <map>
#include <string>
#include <vector>

#include "gcav/nn.hpp"
#include "gcav/tensor.hpp"

namespace gcav {

// A planted ground-truth concept: a unit direction in input space plus the
// relevance map that says which classes actually use it.
struct ConceptSpec {
  std::string concept_id;
  std::vector<float> direction;         // unit vector, dim d_in
  std::map<std::string, bool> relevance;  // class_id -> planted ground truth
};

struct ProbeSet {
  enum class Kind { Concept, Random };
  Kind kind = Kind::Random;
  std::string concept_id;  // empty for random sets
  int set_index = -1;      // for random sets
  Tensor examples;         // [count × d_in]
  int count = 0;
};

struct World {
  uint64_t seed = 0;
  int d_in = 0;
  float noise_sigma = 0.3f;
  std::vector<ConceptSpec> concepts;
  std::vector<std::string> class_ids;
  std::vector<Tensor> class_inputs;  // per class [n × d_in]

  int concept_index(const std::string& concept_id) const;
  int class_index(const std::string& class_id) const;
  bool relevant(int concept_idx, int class_idx) const;
};

// Orthonormal concept directions; class-k inputs are sums of alpha*direction
// over the relevant concepts (alpha ~ U[1,2]) plus N(0, sigma^2) noise. Every
// class gets at least one relevant and one irrelevant concept.
World generate_world(uint64_t seed, int d_in, int n_concepts, int n_classes,
                     int examples_per_class, float noise_sigma = 0.3f);

// Concept set: 50 inputs with high projection on the concept direction.
// Random sets: pure noise, shared across concepts (indices identify them).
ProbeSet make_concept_probe(const World& world, const std::string& concept_id,
                            int count = 50);
std::vector<ProbeSet> make_random_probes(const World& world, int n_sets,
                                         int count = 50);
// spec-shaped convenience: concept set plus n random sets
std::pair<ProbeSet, std::vector<ProbeSet>> make_probe_sets(
    const World& world, const std::string& concept_id, int n_random_sets = 10,
    int count = 50);

// Fully connected classifier with named hidden layers L1..LH; activations at
// the instrumented subset are the per-layer features the pipeline consumes.
struct TargetModel {
  int d_in = 0;
  int width = 0;
  int n_classes = 0;
  std::vector<Linear> hidden;  // ReLU after each
  Linear head;
  std::vector<std::string> instrumented;

  // 1-based index of a hidden layer name ("L3" -> 3); throws on unknown or
  // uninstrumented layers where required
  int layer_number(const std::string& layer) const;
  void check_instrumented(const std::string& layer) const;
  int layer_dim(const std::string& layer) const { return width; }

  Tensor forward(const Tensor& x) const;
  Tensor forward_to(const std::string& layer, const Tensor& x) const;
  Tensor head_from(const std::string& layer, const Tensor& acts) const;

  // eval-mode activation slice, [n × d_l]
  Tensor activations(const std::string& layer, const Tensor& inputs) const;
  // gradient of the class-k logit w.r.t. the layer activation, per example
  Tensor logit_gradient(const std::string& layer, int class_k,
                        const Tensor& acts) const;

  std::vector<Tensor> params();
  std::vector<Tensor> params() const;
  void set_requires_grad(bool value);
};

TargetModel make_target_model(uint64_t seed, int d_in, int width, int depth,
                              int n_classes,
                              const std::vector<std::string>& instrumented);

// Stacks all class inputs with labels (fixed class order).
struct LabeledData {
  Tensor inputs;
  std::vector<int> labels;
};
LabeledData stack_dataset(const World& world);

// Softmax cross-entropy with Adam; returns final training accuracy and
// throws if it ends below min_accuracy.
float train_target(TargetModel& model, const World& world, int epochs,
                   float lr = 5e-3f, float min_accuracy = 0.95f);

}  // namespace gcav
