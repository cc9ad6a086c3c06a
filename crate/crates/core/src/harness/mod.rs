//! Test harness pieces that stand in for the upstream SMS platform and the
//! human experts: a seeded corpus generator, a paced pusher, and scripted
//! labelers. Each talks to the service through a small trait so the same
//! code drives an in-process [`Engine`](crate::Engine) or a remote server.

mod autolabel;
mod replay;
mod synth;

pub use autolabel::{auto_label, AutoLabelConfig, AutoLabelReport, LabelingBackend, TruthTable};
pub use replay::{replay, replay_lines, PushError, PushTarget, Rate, ReplayPlan, ReplayReport};
pub use synth::{generate, read_corpus, write_corpus, CorpusLine, SynthCategory, SyntheticSpec};
