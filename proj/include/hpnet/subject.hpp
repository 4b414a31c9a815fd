#pragma once
#include <optional>
#include <string>

#include "hpnet/volume.hpp"

namespace hpnet {

enum class Diagnosis { NC, AD, MCI };

inline std::string to_string(Diagnosis d) {
    switch (d) {
        case Diagnosis::NC: return "NC";
        case Diagnosis::AD: return "AD";
        default: return "MCI";
    }
}

// Baseline clinical covariates; absent value = not collected.
struct ClinicalVars {
    std::optional<double> age, sex, education, apoe4;
    std::optional<double> adas13, ravlt_immediate, ravlt_learning, faq, mmse;
    std::optional<double> csf_abeta42, suvr;
};

struct SubjectRecord {
    std::string id;
    Volume left, right;
    Diagnosis label = Diagnosis::MCI;
    std::optional<double> time_months;  // follow-up or progression time
    std::optional<int> event;           // 1 = progressed, 0 = censored
    ClinicalVars clinical;
    std::optional<double> severity;  // synthetic ground truth, never read by models
};

}  // namespace hpnet
