//! Named, versioned network parameters partitioned into freezable groups.

use std::collections::BTreeMap;

use ndarray::{Array1, ArrayD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Graph, NodeId};

/// Capacity preset controlling encoder depth and widths everywhere.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScaleProfile {
    Tiny,
    Small,
    Full,
}

impl ScaleProfile {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tiny" => Ok(ScaleProfile::Tiny),
            "small" => Ok(ScaleProfile::Small),
            "full" => Ok(ScaleProfile::Full),
            other => Err(Error::Config(format!("unknown scale_profile `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ScaleProfile::Tiny => "tiny",
            ScaleProfile::Small => "small",
            ScaleProfile::Full => "full",
        }
    }

    /// Encoder stage widths for the frame-prediction branch (4 stride-2 stages).
    pub fn gen_widths(&self) -> [usize; 4] {
        match self {
            ScaleProfile::Tiny => [8, 12, 16, 24],
            ScaleProfile::Small => [16, 24, 32, 48],
            ScaleProfile::Full => [64, 128, 256, 512],
        }
    }

    /// Residual units per encoder stage (each unit is one 3x3 conv with an
    /// identity shortcut).
    pub fn res_units(&self) -> usize {
        match self {
            ScaleProfile::Tiny => 1,
            ScaleProfile::Small => 2,
            ScaleProfile::Full => 3,
        }
    }

    /// Decoder deconvolution output widths at 1/8, 1/4 and 1/2 resolution.
    pub fn dec_widths(&self) -> [usize; 3] {
        match self {
            ScaleProfile::Tiny => [16, 12, 8],
            ScaleProfile::Small => [32, 24, 16],
            ScaleProfile::Full => [256, 128, 64],
        }
    }

    /// 1x1 compaction widths for the three encoder skip connections.
    pub fn compact_widths(&self) -> [usize; 3] {
        match self {
            ScaleProfile::Tiny => [8, 8, 6],
            ScaleProfile::Small => [16, 16, 12],
            ScaleProfile::Full => [128, 64, 32],
        }
    }

    /// Discriminator conv widths (stride-2 stages) and FC width.
    pub fn disc_widths(&self) -> Vec<usize> {
        match self {
            ScaleProfile::Tiny => vec![8, 16, 24],
            ScaleProfile::Small => vec![16, 32, 48],
            ScaleProfile::Full => vec![64, 128, 256, 512],
        }
    }

    /// Segmentation backbone stage widths (two stride-2 stages after the
    /// stem, then two dilated stride-1 stages).
    pub fn sp_widths(&self) -> [usize; 5] {
        match self {
            ScaleProfile::Tiny => [8, 12, 16, 16, 16],
            ScaleProfile::Small => [16, 24, 32, 32, 32],
            ScaleProfile::Full => [64, 128, 256, 512, 512],
        }
    }

    /// Channel count each pyramid-pooling bin is reduced to.
    pub fn ppm_reduce(&self) -> usize {
        match self {
            ScaleProfile::Tiny => 4,
            ScaleProfile::Small => 8,
            ScaleProfile::Full => 128,
        }
    }

    /// Width of the fused pyramid-pooling context output.
    pub fn ppm_out(&self) -> usize {
        match self {
            ScaleProfile::Tiny => 16,
            ScaleProfile::Small => 32,
            ScaleProfile::Full => 256,
        }
    }

    /// Attention-stage feature width (after alignment projections).
    pub fn att_width(&self) -> usize {
        match self {
            ScaleProfile::Tiny => 8,
            ScaleProfile::Small => 16,
            ScaleProfile::Full => 64,
        }
    }

    /// Width the temporal features are projected to inside each attention
    /// stage.
    pub fn att_temp_width(&self) -> usize {
        match self {
            ScaleProfile::Tiny => 4,
            ScaleProfile::Small => 8,
            ScaleProfile::Full => 32,
        }
    }

    /// Channel counts of the exported temporal feature pyramid, ordered
    /// from 1/4 to 1/16 resolution.
    pub fn pyramid_channels(&self) -> [usize; 3] {
        let dec = self.dec_widths();
        let enc = self.gen_widths();
        [dec[1], dec[0], enc[3]]
    }
}

/// Identifies one freezable parameter group.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupId {
    Generator,
    Discriminator,
    Spatial,
}

impl GroupId {
    pub const ALL: [GroupId; 3] = [GroupId::Generator, GroupId::Discriminator, GroupId::Spatial];

    pub fn name(&self) -> &'static str {
        match self {
            GroupId::Generator => "generator",
            GroupId::Discriminator => "discriminator",
            GroupId::Spatial => "spatial",
        }
    }
}

/// One named array. Non-trainable entries hold state such as normalization
/// statistics; the optimizers never touch them.
#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub value: ArrayD<f64>,
    pub trainable: bool,
}

#[derive(Clone, Debug, Default)]
pub struct ParamGroup {
    pub frozen: bool,
    pub entries: BTreeMap<String, ParamEntry>,
}

impl ParamGroup {
    pub fn insert(&mut self, name: &str, value: ArrayD<f64>, trainable: bool) {
        let prev = self
            .entries
            .insert(name.to_string(), ParamEntry { value, trainable });
        assert!(prev.is_none(), "duplicate parameter name `{name}`");
    }

    pub fn get(&self, name: &str) -> &ArrayD<f64> {
        &self
            .entries
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
            .value
    }

    pub fn get_vec1(&self, name: &str) -> Array1<f64> {
        self.get(name)
            .view()
            .into_dimensionality::<ndarray::Ix1>()
            .unwrap()
            .to_owned()
    }

    pub fn set(&mut self, name: &str, value: ArrayD<f64>) {
        let entry = self
            .entries
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"));
        assert_eq!(entry.value.shape(), value.shape());
        entry.value = value;
    }

    /// Little-endian byte image of every array, in name order. Used by the
    /// freeze-contract checks.
    pub fn byte_image(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for (name, entry) in &self.entries {
            out.extend_from_slice(name.as_bytes());
            for v in entry.value.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }
}

/// All learnable state of the model: generator, discriminator and spatial
/// segmentation branch, plus the manifest data a checkpoint carries.
#[derive(Clone, Debug)]
pub struct NetworkParameters {
    pub profile: ScaleProfile,
    pub delta: usize,
    pub seed: u64,
    pub version: u32,
    groups: BTreeMap<GroupId, ParamGroup>,
}

pub const CHECKPOINT_VERSION: u32 = 1;

impl NetworkParameters {
    pub fn empty(profile: ScaleProfile, delta: usize, seed: u64) -> Self {
        let mut groups = BTreeMap::new();
        for id in GroupId::ALL {
            groups.insert(id, ParamGroup::default());
        }
        NetworkParameters {
            profile,
            delta,
            seed,
            version: CHECKPOINT_VERSION,
            groups,
        }
    }

    pub fn group(&self, id: GroupId) -> &ParamGroup {
        &self.groups[&id]
    }

    pub fn group_mut(&mut self, id: GroupId) -> &mut ParamGroup {
        self.groups.get_mut(&id).unwrap()
    }

    pub fn set_frozen(&mut self, id: GroupId, frozen: bool) {
        self.group_mut(id).frozen = frozen;
    }

    pub fn is_frozen(&self, id: GroupId) -> bool {
        self.group(id).frozen
    }

    pub fn groups(&self) -> impl Iterator<Item = (GroupId, &ParamGroup)> {
        self.groups.iter().map(|(k, v)| (*k, v))
    }
}

/// Maps parameter names of one group to graph nodes for a single forward
/// pass. Trainable entries of unfrozen groups become leaves when
/// `train` is set; everything else enters the graph as constants.
pub struct Binding {
    map: BTreeMap<String, NodeId>,
    leaves: Vec<(String, NodeId)>,
}

impl Binding {
    pub fn bind(g: &mut Graph, params: &NetworkParameters, id: GroupId, train: bool) -> Self {
        let group = params.group(id);
        let mut map = BTreeMap::new();
        let mut leaves = Vec::new();
        for (name, entry) in &group.entries {
            let node = if train && !group.frozen && entry.trainable {
                let n = g.leaf(entry.value.clone());
                leaves.push((name.clone(), n));
                n
            } else {
                g.constant(entry.value.clone())
            };
            map.insert(name.clone(), node);
        }
        Binding { map, leaves }
    }

    pub fn node(&self, name: &str) -> NodeId {
        *self
            .map
            .get(name)
            .unwrap_or_else(|| panic!("unbound parameter `{name}`"))
    }

    /// Pull gradients for every leaf out of a finished backward pass.
    pub fn collect_grads(&self, grads: &mut crate::nn::Gradients) -> BTreeMap<String, ArrayD<f64>> {
        let mut out = BTreeMap::new();
        for (name, node) in &self.leaves {
            if let Some(gr) = grads.take(*node) {
                out.insert(name.clone(), gr);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    #[test]
    fn byte_image_detects_any_change() {
        let mut group = ParamGroup::default();
        group.insert("a/w", ArrayD::from_elem(IxDyn(&[2, 2]), 1.0), true);
        group.insert("a/b", ArrayD::from_elem(IxDyn(&[2]), 0.0), true);
        let before = group.byte_image();
        let mut v = group.get("a/w").clone();
        // nudge by one ulp: byte images must see even the smallest change
        v[[0, 1]] = f64::from_bits(v[[0, 1]].to_bits() + 1);
        group.set("a/w", v);
        assert_ne!(before, group.byte_image());
    }

    #[test]
    #[should_panic(expected = "duplicate parameter name")]
    fn duplicate_names_rejected() {
        let mut group = ParamGroup::default();
        group.insert("x", ArrayD::zeros(IxDyn(&[1])), true);
        group.insert("x", ArrayD::zeros(IxDyn(&[1])), true);
    }
}
