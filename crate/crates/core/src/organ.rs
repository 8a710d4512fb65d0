//! The fixed five-organ universe every per-organ structure is indexed by.

use std::fmt;
use std::ops::{Index, IndexMut};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::OridError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrganId {
    Lung,
    Heart,
    Bone,
    Pleural,
    Mediastinum,
}

impl OrganId {
    /// Canonical iteration order.
    pub const ALL: [OrganId; 5] =
        [OrganId::Lung, OrganId::Heart, OrganId::Bone, OrganId::Pleural, OrganId::Mediastinum];

    pub const COUNT: usize = 5;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<OrganId> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            OrganId::Lung => "lung",
            OrganId::Heart => "heart",
            OrganId::Bone => "bone",
            OrganId::Pleural => "pleural",
            OrganId::Mediastinum => "mediastinum",
        }
    }

    /// Number of segmentation channels grouped under this organ.
    pub fn mask_channels(self) -> usize {
        match self {
            OrganId::Lung => 15,
            OrganId::Heart => 6,
            OrganId::Bone => 70,
            OrganId::Pleural => 10,
            OrganId::Mediastinum => 9,
        }
    }

    /// Fixed token length of the organ's diagnosis description.
    pub fn description_length(self) -> usize {
        match self {
            OrganId::Lung => 53,
            OrganId::Heart => 39,
            OrganId::Bone => 48,
            OrganId::Pleural => 43,
            OrganId::Mediastinum => 41,
        }
    }

    /// Words that name the organ directly (including adjective forms).
    pub fn name_forms(self) -> &'static [&'static str] {
        match self {
            OrganId::Lung => &["lung", "lungs"],
            OrganId::Heart => &["heart", "cardiac"],
            OrganId::Bone => &["bone", "bones", "osseous", "skeletal"],
            OrganId::Pleural => &["pleural", "pleura"],
            OrganId::Mediastinum => &["mediastinum", "mediastinal"],
        }
    }
}

impl fmt::Display for OrganId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OrganId {
    type Err = OridError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        OrganId::ALL
            .into_iter()
            .find(|o| o.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| OridError::InvalidArgument(format!("unknown organ '{s}'")))
    }
}

/// One value per organ, stored and iterated in canonical order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerOrgan<T>(pub [T; 5]);

impl<T> PerOrgan<T> {
    pub fn from_fn(mut f: impl FnMut(OrganId) -> T) -> Self {
        PerOrgan(OrganId::ALL.map(&mut f))
    }

    pub fn try_from_fn<E>(mut f: impl FnMut(OrganId) -> Result<T, E>) -> Result<Self, E> {
        let [a, b, c, d, e] = OrganId::ALL;
        Ok(PerOrgan([f(a)?, f(b)?, f(c)?, f(d)?, f(e)?]))
    }

    pub fn iter(&self) -> impl Iterator<Item = (OrganId, &T)> {
        OrganId::ALL.into_iter().zip(self.0.iter())
    }

    pub fn values(&self) -> impl Iterator<Item = &T> {
        self.0.iter()
    }

    pub fn map<U>(&self, mut f: impl FnMut(OrganId, &T) -> U) -> PerOrgan<U> {
        PerOrgan::from_fn(|o| f(o, &self[o]))
    }
}

impl<T: Default> Default for PerOrgan<T> {
    fn default() -> Self {
        PerOrgan::from_fn(|_| T::default())
    }
}

impl<T> Index<OrganId> for PerOrgan<T> {
    type Output = T;

    fn index(&self, o: OrganId) -> &T {
        &self.0[o.index()]
    }
}

impl<T> IndexMut<OrganId> for PerOrgan<T> {
    fn index_mut(&mut self, o: OrganId) -> &mut T {
        &mut self.0[o.index()]
    }
}
