//! Neural network building blocks: planar feature maps, layers with manual
//! backward passes, the denoising U-Net, and the input conditioner.

pub mod conditioner;
pub mod embedding;
pub mod feat;
pub mod layers;
pub mod unet;

pub use conditioner::{Conditioner, ConditionerConfig};
pub use feat::Feat;
pub use layers::{Param, ParamVisitor};
pub use unet::{UNet, UNetConfig};

use crate::error::Result;
use crate::rng::Stream;

/// The jointly trained pair: conditioning head plus denoising U-Net.
#[derive(Clone)]
pub struct Model {
    pub cond: Conditioner,
    pub unet: UNet,
}

impl Model {
    /// Builds both networks from one seed; construction order fixes the
    /// parameter layout, so identical seeds give identical models.
    pub fn new(seed: u64, unet: UNetConfig, cond: ConditionerConfig) -> Result<Self> {
        let mut stream = Stream::new(seed, &[0x1217]);
        let cond = Conditioner::new(&mut stream, cond)?;
        let unet = UNet::new(&mut stream, unet)?;
        Ok(Model { cond, unet })
    }

    /// Visits every parameter, conditioner first, in a stable order.
    pub fn visit(&mut self, f: &mut ParamVisitor) {
        self.cond.visit(f);
        self.unet.visit(f);
    }

    pub fn zero_grad(&mut self) {
        self.visit(&mut |_, p| p.zero_grad());
    }

    pub fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, p| n += p.len());
        n
    }
}
