pub mod annotation;
pub mod checkpoint;
pub mod field;
pub mod pgm;

pub use annotation::AnnotationFile;
pub use checkpoint::Checkpoint;
