//! Random Forest training, hold-out evaluation and prediction.

mod auc;
mod eval;
mod forest;
mod model;
mod schema;
mod split;

pub use auc::auc_one_vs_rest;
pub use eval::{evaluate, CategoryAuc, Metrics};
pub use forest::{train_forest, Forest, ForestParams, Node, Tree, DEFAULT_NUM_TREES};
pub use model::{predict, train_model, LabeledText, ModelSnapshot, Prediction, TrainedModel};
pub use schema::{Category, ClassifierSchema, SchemaSpec, SelectionPolicy};
pub use split::split_holdout;
