use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    WideResnet,
    TabularMlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Classification,
    Regression,
}

/// Architecture description. `input_dim` is the number of image channels for
/// `wide-resnet` and the feature count for `tabular-mlp`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    pub depth: usize,
    pub width_factor: usize,
    pub num_outputs: usize,
    pub task: Task,
    #[serde(default = "default_input_dim")]
    pub input_dim: usize,
}

fn default_input_dim() -> usize {
    3
}

/// Base channel widths of the three residual groups before widening.
pub const WRN_BASE_WIDTHS: [usize; 3] = [16, 32, 64];
pub const WRN_STEM_CHANNELS: usize = 16;
/// Widest hidden layer of a width-1 tabular MLP; each further layer halves.
pub const MLP_BASE_WIDTH: usize = 256;
const MLP_MIN_WIDTH: usize = 8;

impl ModelSpec {
    pub fn wide_resnet(depth: usize, width_factor: usize, num_outputs: usize) -> Self {
        ModelSpec {
            family: Family::WideResnet,
            depth,
            width_factor,
            num_outputs,
            task: Task::Classification,
            input_dim: 3,
        }
    }

    pub fn tabular_mlp(depth: usize, width_factor: usize, input_dim: usize) -> Self {
        ModelSpec {
            family: Family::TabularMlp,
            depth,
            width_factor,
            num_outputs: 1,
            task: Task::Regression,
            input_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.width_factor == 0 || self.input_dim == 0 {
            return Err(Error::Spec(
                "depth, width_factor and input_dim must be positive".into(),
            ));
        }
        if self.num_outputs == 0 {
            return Err(Error::Spec("num_outputs must be at least 1".into()));
        }
        if self.task == Task::Regression && self.num_outputs != 1 {
            return Err(Error::Spec(format!(
                "regression requires num_outputs = 1, got {}",
                self.num_outputs
            )));
        }
        if self.family == Family::WideResnet && (self.depth % 6 != 4 || self.depth < 10) {
            return Err(Error::Spec(format!(
                "depth must be 6k+4 with k >= 1, got {}",
                self.depth
            )));
        }
        Ok(())
    }

    /// Residual blocks per group for `wide-resnet`.
    pub fn blocks_per_group(&self) -> usize {
        (self.depth - 4) / 6
    }

    pub fn group_widths(&self) -> [usize; 3] {
        WRN_BASE_WIDTHS.map(|w| w * self.width_factor)
    }

    /// Hidden layer widths for `tabular-mlp`.
    pub fn hidden_widths(&self) -> Vec<usize> {
        (0..self.depth)
            .map(|i| ((MLP_BASE_WIDTH * self.width_factor) >> i).max(MLP_MIN_WIDTH))
            .collect()
    }

    /// Short human label such as `WRN-16-2` or `MLP-3x1`.
    pub fn label(&self) -> String {
        match self.family {
            Family::WideResnet => format!("WRN-{}-{}", self.depth, self.width_factor),
            Family::TabularMlp => format!("MLP-{}x{}", self.depth, self.width_factor),
        }
    }
}
