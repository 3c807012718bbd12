use crate::confidence::VcmConfig;
use crate::error::{Error, Result};

/// Dimensions, ablation toggles and loss weight of one model instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    /// Visual channels `C`.
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Audio embedding size `d`.
    pub audio_dim: usize,
    /// Frames per clip `T`.
    pub frames: usize,
    /// Artifact types `K`.
    pub kinds: usize,
    pub use_avm: bool,
    pub use_vcm: bool,
    pub use_acm: bool,
    pub lambda_pcc: f64,
    pub fusion_hidden: usize,
    pub kernel_width: usize,
    pub heads: usize,
    pub head_hidden: usize,
    pub combiner_hidden: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: 32,
            height: 4,
            width: 4,
            audio_dim: 16,
            frames: 8,
            kinds: 10,
            use_avm: true,
            use_vcm: true,
            use_acm: true,
            lambda_pcc: 0.15,
            fusion_hidden: 64,
            kernel_width: 5,
            heads: 4,
            head_hidden: 16,
            combiner_hidden: 8,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn with_toggles(mut self, avm: bool, vcm: bool, acm: bool) -> Self {
        self.use_avm = avm;
        self.use_vcm = vcm;
        self.use_acm = acm;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn vcm(&self) -> VcmConfig {
        VcmConfig {
            kinds: self.kinds,
            kernel_width: self.kernel_width,
            heads: self.heads,
            head_hidden: self.head_hidden,
            combiner_hidden: self.combiner_hidden,
        }
    }

    /// Width of the fusion input `[visual; audio; r_v; r_a]`.
    pub fn fusion_input(&self) -> usize {
        self.channels + self.audio_dim + 2
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("channels", self.channels),
            ("height", self.height),
            ("width", self.width),
            ("audio_dim", self.audio_dim),
            ("frames", self.frames),
            ("kinds", self.kinds),
            ("fusion_hidden", self.fusion_hidden),
            ("kernel_width", self.kernel_width),
            ("heads", self.heads),
            ("head_hidden", self.head_hidden),
            ("combiner_hidden", self.combiner_hidden),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.kernel_width.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "kernel_width must be odd, got {}",
                self.kernel_width
            )));
        }
        if !(self.lambda_pcc >= 0.0) || !self.lambda_pcc.is_finite() {
            return Err(Error::Config(format!(
                "lambda_pcc must be finite and non-negative, got {}",
                self.lambda_pcc
            )));
        }
        Ok(())
    }

    /// `key = value` lines, one per field, in a fixed order.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        put("channels", self.channels.to_string());
        put("height", self.height.to_string());
        put("width", self.width.to_string());
        put("audio_dim", self.audio_dim.to_string());
        put("frames", self.frames.to_string());
        put("kinds", self.kinds.to_string());
        put("use_avm", self.use_avm.to_string());
        put("use_vcm", self.use_vcm.to_string());
        put("use_acm", self.use_acm.to_string());
        // bit pattern keeps the round trip exact
        put("lambda_pcc", format!("{:#018x}", self.lambda_pcc.to_bits()));
        put("fusion_hidden", self.fusion_hidden.to_string());
        put("kernel_width", self.kernel_width.to_string());
        put("heads", self.heads.to_string());
        put("head_hidden", self.head_hidden.to_string());
        put("combiner_hidden", self.combiner_hidden.to_string());
        put("seed", self.seed.to_string());
        s
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("malformed config line `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            let usize_of = |v: &str| {
                v.parse::<usize>()
                    .map_err(|e| Error::Config(format!("{key}: {e}")))
            };
            let bool_of = |v: &str| {
                v.parse::<bool>()
                    .map_err(|e| Error::Config(format!("{key}: {e}")))
            };
            match key {
                "channels" => cfg.channels = usize_of(value)?,
                "height" => cfg.height = usize_of(value)?,
                "width" => cfg.width = usize_of(value)?,
                "audio_dim" => cfg.audio_dim = usize_of(value)?,
                "frames" => cfg.frames = usize_of(value)?,
                "kinds" => cfg.kinds = usize_of(value)?,
                "use_avm" => cfg.use_avm = bool_of(value)?,
                "use_vcm" => cfg.use_vcm = bool_of(value)?,
                "use_acm" => cfg.use_acm = bool_of(value)?,
                "lambda_pcc" => {
                    let bits = value
                        .strip_prefix("0x")
                        .ok_or_else(|| Error::Config("lambda_pcc must be a hex bit pattern".into()))?;
                    cfg.lambda_pcc = f64::from_bits(
                        u64::from_str_radix(bits, 16)
                            .map_err(|e| Error::Config(format!("lambda_pcc: {e}")))?,
                    );
                }
                "fusion_hidden" => cfg.fusion_hidden = usize_of(value)?,
                "kernel_width" => cfg.kernel_width = usize_of(value)?,
                "heads" => cfg.heads = usize_of(value)?,
                "head_hidden" => cfg.head_hidden = usize_of(value)?,
                "combiner_hidden" => cfg.combiner_hidden = usize_of(value)?,
                "seed" => {
                    cfg.seed = value
                        .parse()
                        .map_err(|e| Error::Config(format!("seed: {e}")))?
                }
                other => return Err(Error::Config(format!("unknown config key `{other}`"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_setup() {
        let c = ModelConfig::default();
        assert_eq!(c.lambda_pcc, 0.15);
        assert_eq!(c.frames, 8);
        assert_eq!(c.kinds, 10);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn kv_round_trip() {
        let c = ModelConfig {
            lambda_pcc: 0.1 + 0.2,
            seed: u64::MAX,
            ..ModelConfig::default()
        }
        .with_toggles(false, true, false);
        assert_eq!(ModelConfig::from_kv(&c.to_kv()).unwrap(), c);
    }

    #[test]
    fn validation_errors() {
        let c = ModelConfig {
            channels: 0,
            ..ModelConfig::default()
        };
        assert!(c.validate().is_err());
        let c = ModelConfig {
            lambda_pcc: -0.1,
            ..ModelConfig::default()
        };
        assert!(c.validate().is_err());
        assert!(ModelConfig::from_kv("bogus = 1").is_err());
    }
}
