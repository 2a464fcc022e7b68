use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};

/// Which of the encoder, latent and decoder positions carry a Transformer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ModelVariant {
    pub enc: bool,
    pub lat: bool,
    pub dec: bool,
}

impl ModelVariant {
    pub const VAE: ModelVariant = ModelVariant { enc: false, lat: false, dec: false };
    pub const E_VAE: ModelVariant = ModelVariant { enc: true, lat: false, dec: false };
    pub const EL_VAE: ModelVariant = ModelVariant { enc: true, lat: true, dec: false };
    pub const ELD_VAE: ModelVariant = ModelVariant { enc: true, lat: true, dec: true };
    pub const LD_VAE: ModelVariant = ModelVariant { enc: false, lat: true, dec: true };
    pub const D_VAE: ModelVariant = ModelVariant { enc: false, lat: false, dec: true };

    pub const ALL: [ModelVariant; 6] = [
        Self::VAE,
        Self::E_VAE,
        Self::EL_VAE,
        Self::ELD_VAE,
        Self::LD_VAE,
        Self::D_VAE,
    ];

    /// Only the six contiguous placements are admissible.
    pub fn new(enc: bool, lat: bool, dec: bool) -> Result<Self> {
        let v = ModelVariant { enc, lat, dec };
        if !Self::ALL.contains(&v) {
            bail!(InvalidArgument, "unsupported placement enc={} lat={} dec={}", enc, lat, dec);
        }
        Ok(v)
    }

    pub fn name(self) -> &'static str {
        match (self.enc, self.lat, self.dec) {
            (false, false, false) => "VAE",
            (true, false, false) => "E-VAE",
            (true, true, false) => "EL-VAE",
            (true, true, true) => "ELD-VAE",
            (false, true, true) => "LD-VAE",
            (false, false, true) => "D-VAE",
            _ => "invalid",
        }
    }

    pub fn has(self, c: Component) -> bool {
        match c {
            Component::Enc => self.enc,
            Component::Lat => self.lat,
            Component::Dec => self.dec,
        }
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelVariant {
    type Err = Error;

    /// Accepts `ELD-VAE`, `eld-vae`, `ELD` and `VAE`.
    fn from_str(s: &str) -> Result<Self> {
        let up = s.trim().to_ascii_uppercase();
        let prefix = up
            .strip_suffix("-VAE")
            .or_else(|| up.strip_suffix("VAE"))
            .unwrap_or(&up);
        let (mut enc, mut lat, mut dec) = (false, false, false);
        for ch in prefix.chars() {
            let slot = match ch {
                'E' => &mut enc,
                'L' => &mut lat,
                'D' => &mut dec,
                _ => bail!(InvalidArgument, "unknown variant `{}`", s),
            };
            if *slot {
                bail!(InvalidArgument, "unknown variant `{}`", s);
            }
            *slot = true;
        }
        let v = ModelVariant::new(enc, lat, dec)?;
        if v.name().trim_end_matches("-VAE").trim_end_matches("VAE") != prefix {
            bail!(InvalidArgument, "unknown variant `{}`", s);
        }
        Ok(v)
    }
}

impl Serialize for ModelVariant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for ModelVariant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Transformer position inside the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Enc,
    Lat,
    Dec,
}

impl Component {
    pub const ALL: [Component; 3] = [Component::Enc, Component::Lat, Component::Dec];

    pub fn as_str(self) -> &'static str {
        match self {
            Component::Enc => "enc",
            Component::Lat => "lat",
            Component::Dec => "dec",
        }
    }

    pub(crate) fn prefix(self) -> &'static str {
        match self {
            Component::Enc => "tf_enc",
            Component::Lat => "tf_lat",
            Component::Dec => "tf_dec",
        }
    }
}

impl FromStr for Component {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "enc" | "encoder" => Ok(Component::Enc),
            "lat" | "latent" => Ok(Component::Lat),
            "dec" | "decoder" => Ok(Component::Dec),
            _ => bail!(InvalidArgument, "unknown component `{}`", s),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_parse_back() {
        for v in ModelVariant::ALL {
            assert_eq!(v.name().parse::<ModelVariant>().unwrap(), v);
        }
        let v: ModelVariant = "ELD-VAE".parse().unwrap();
        assert!(v.enc && v.lat && v.dec);
        assert_eq!("ld".parse::<ModelVariant>().unwrap(), ModelVariant::LD_VAE);
    }

    #[test]
    fn non_contiguous_placements_rejected() {
        assert!(ModelVariant::new(true, false, true).is_err());
        assert!(ModelVariant::new(false, true, false).is_err());
        assert!("ED-VAE".parse::<ModelVariant>().is_err());
        assert!("LE-VAE".parse::<ModelVariant>().is_err());
        assert!("X-VAE".parse::<ModelVariant>().is_err());
    }
}
