#pragma once

#include <string>

#include "crlab/errors.hpp"

namespace crlab {

// The four prompting regimes under study. CompositeReasoning layers
// self-refinement on top of chain-of-thought drafting.
enum class Paradigm : int {
    Direct = 0,
    ChainOfThought,
    SelfRefine,
    CompositeReasoning,
};

constexpr int kParadigmCount = 4;

inline const char* paradigm_name(Paradigm p) {
    switch (p) {
        case Paradigm::Direct: return "direct";
        case Paradigm::ChainOfThought: return "cot";
        case Paradigm::SelfRefine: return "sr";
        case Paradigm::CompositeReasoning: return "cr";
    }
    return "?";
}

inline Paradigm paradigm_from_name(const std::string& name) {
    if (name == "direct") return Paradigm::Direct;
    if (name == "cot") return Paradigm::ChainOfThought;
    if (name == "sr") return Paradigm::SelfRefine;
    if (name == "cr") return Paradigm::CompositeReasoning;
    throw ConfigError("unknown paradigm '" + name + "' (expected direct|cot|sr|cr)");
}

}  // namespace crlab
