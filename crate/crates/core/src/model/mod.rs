mod cell;
mod checkpoint;
mod config;
mod mode;
mod network;
mod params;

pub use cell::{
    cell_step, cell_step_vars, CellGeometry, CellMasks, CellVarState, CellVars, MemoryCellParams, MemoryCellState,
    CELL_PARAM_NAMES,
};
pub use checkpoint::{load_checkpoint, load_checkpoint_with, save_checkpoint, save_checkpoint_with, Checkpoint};
pub use config::{build_ablation, group_count, NetworkConfig, StageConfig, Variant};
pub use mode::{Action, Mode};
pub use network::{DropoutMasks, MultimodalLayer, MultimodalLayerState, NetState, NetVarState, Network, StepVars};
pub use params::{param_group, Binder, ParamStore};
