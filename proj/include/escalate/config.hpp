#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "escalate/animal_prior.hpp"
#include "escalate/commensurability.hpp"
#include "escalate/dose_model.hpp"
#include "escalate/trial_engine.hpp"

// JSON codecs for the declarative config files and session documents.
// Decoders validate and throw FieldError naming the offending key.

namespace escalate {

using nlohmann::json;

void to_json(json& j, const DoseGrid& g);
void from_json(const json& j, DoseGrid& g);
void to_json(json& j, const AnimalArm& a);
void from_json(const json& j, AnimalArm& a);
void to_json(json& j, const AnimalStudy& s);
void from_json(const json& j, AnimalStudy& s);
void to_json(json& j, const BvnParams& b);
void from_json(const json& j, BvnParams& b);
void to_json(json& j, const Scenario& s);
void from_json(const json& j, Scenario& s);
void to_json(json& j, const UtilityTable& u);
void from_json(const json& j, UtilityTable& u);
void to_json(json& j, const TrialConfig& c);
void from_json(const json& j, TrialConfig& c);
void to_json(json& j, const CohortOutcome& c);
void from_json(const json& j, CohortOutcome& c);
void to_json(json& j, const WeightTraceEntry& e);
void from_json(const json& j, WeightTraceEntry& e);
void to_json(json& j, const PosteriorSummary& s);

/// Fitted prior as exported for reuse: mu1, mu2, s11, s12, s22, d_ref, delta.
struct BvnRecord {
    BvnParams params;
    double d_ref = 0.0;
    double delta = 0.0;
};
void to_json(json& j, const BvnRecord& r);
void from_json(const json& j, BvnRecord& r);

/// The published dog-data fit, used as the default informative component.
BvnRecord published_dog_prior();
/// Dog study behind it: 0.1 mg/kg (1/30 toxic) and 2.7 mg/kg (17/30), factor 20.
AnimalStudy dog_study();

json read_json_file(const std::filesystem::path& path);
void write_text_file_atomic(const std::filesystem::path& path, const std::string& text);

/// Trial design file: {"grid": ..., "animal_study" | "informative": ..., "weak"?: ..., "trial": ...}
struct DesignFile {
    DoseGrid grid;
    std::optional<AnimalStudy> study;
    std::optional<BvnRecord> informative;
    std::optional<BvnParams> weak;
    TrialConfig trial;
};
DesignFile parse_design(const json& j);

/// {"grid": ..., "scenarios": [...]}; a missing file section falls back to Table 3.
struct ScenarioFile {
    DoseGrid grid;
    std::vector<Scenario> scenarios;
};
ScenarioFile parse_scenarios(const json& j);

}  // namespace escalate
