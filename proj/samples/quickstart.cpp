// Synthetic data -> one model per trait -> questionnaire -> score a subject.
#include <iostream>

#include "vbfi/eval.hpp"
#include "vbfi/questionnaire.hpp"

int main() {
  using namespace vbfi;
  const SynthData data = generate_synthetic(SynthSpec{});

  std::map<Trait, VgbdtModel> models;
  for (Trait t : kAllTraits) models.emplace(t, train(data.views, data.labels.at(t), BoostingConfig{}, t));

  const ConceptIndex idx = build_index(data.dataset);
  const Questionnaire q = design_questionnaire(models, data.dataset, idx, 1, ApConfig{}, 42);
  std::cout << q.version_id << ": " << q.question_count() << " questions\n";

  // A subject who picks, for every question, the option their own
  // favorites would be routed to.
  const std::string& user = data.views.users.front();
  ResponseSheet sheet;
  sheet.subject_id = user;
  sheet.version_id = q.version_id;
  for (const auto& [t, model] : models) {
    const auto leaves = model.route(data.views.row(user));
    for (std::size_t m = 0; m < leaves.size(); ++m) sheet.choices.push_back({t, static_cast<int>(m + 1), leaves[m]});
  }
  for (const auto& [t, score] : score_response(q, sheet)) {
    std::cout << trait_long_name(t) << ": " << format_double(score) << " (self-report "
              << format_double(data.dataset.users.at(user).trait(t)) << ")\n";
  }
}
