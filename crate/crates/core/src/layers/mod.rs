//! Recurrent, attention and readout layers built on the autograd graph.

pub mod convgru;
pub mod dropout;
pub mod ftca;
pub mod head;
pub mod init;

pub use convgru::{combine, run_cell, ConvGruCell, ConvGruLayer, DsConvGru, GateVars, StepMasks};
pub use dropout::{mix_seed, Dropout, DropoutMode, DropoutSpec, Site};
pub use ftca::{AttentionTrace, ConvGruFtcaLayer, Ftca, FtcaConfig, FtcaOutput, FtcaUnit};
pub use head::{HeadActivation, OutputHead};
