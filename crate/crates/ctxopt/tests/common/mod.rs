//! Shared fixtures for integration tests: the scripted tool-disambiguation
//! scenario built on the synthetic generator.

use ctxopt::backend::{DisambiguationAgent, DisambiguationPair, DisambiguationReflector};
use ctxopt::synth::{synthesize, SynthSpec, Synthesis};

/// Cue phrases for every ambiguity pair the generator planted.
pub fn disambiguation_pairs(synthesis: &Synthesis) -> Vec<DisambiguationPair> {
    synthesis
        .ledger
        .ambiguity_pairs
        .iter()
        .map(|pair| DisambiguationPair {
            general: pair.general.clone(),
            specialized: pair.specialized.clone(),
            phrase: format!(
                "PREFER {} for routine requests and {} for specialized analysis.",
                pair.general, pair.specialized
            ),
        })
        .collect()
}

/// A 20-tool inventory with 6 confusable pairs and one train/val/test
/// example per tool, plus the scripted agent and reflector that drive it.
pub fn disambiguation_scenario(
    seed: u64,
) -> (
    Synthesis,
    Vec<DisambiguationPair>,
    DisambiguationAgent,
    DisambiguationReflector,
) {
    let spec = SynthSpec::demo(20, 3, 6, seed);
    let synthesis = synthesize(&spec).expect("demo spec is valid");
    let pairs = disambiguation_pairs(&synthesis);
    let agent = DisambiguationAgent::new(&synthesis.dataset, pairs.clone());
    let reflector = DisambiguationReflector::new(&synthesis.dataset.tools, pairs.clone());
    (synthesis, pairs, agent, reflector)
}
