pub mod calibrate;
pub mod conjugate;
pub mod lowerbound;
pub mod sensitivity;
pub mod simulate;
