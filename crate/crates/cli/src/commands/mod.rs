pub mod gradcheck;
pub mod matching;
pub mod train;
pub mod weights;
