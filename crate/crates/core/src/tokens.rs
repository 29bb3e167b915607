//! Reserved token ids shared by both vocabularies.

pub const PAD: usize = 0;
pub const START: usize = 1;
pub const END: usize = 2;
pub const UNK: usize = 3;

pub const RESERVED: [&str; 4] = ["<pad>", "<start>", "<end>", "<unk>"];
