pub mod backbones;
pub mod classes;
pub mod data_pipeline;
pub mod evaluator;
pub mod gateway;
pub mod model_zoo;
pub mod nn;
pub mod predictor;
pub mod seeding;
pub mod tensor;
pub mod trainer;
