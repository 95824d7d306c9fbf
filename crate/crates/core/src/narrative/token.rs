use serde::{Deserialize, Serialize};

use crate::claims::{parse_code, AgeBucket, CodeSystem, MedicalCode, Sex};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TokenKind {
    Age,
    Sex,
    Dx,
    Px,
    Rx,
    Special,
}

impl TokenKind {
    pub fn is_code(self) -> bool {
        matches!(self, TokenKind::Dx | TokenKind::Px | TokenKind::Rx)
    }

    pub fn of_system(system: CodeSystem) -> Self {
        match system {
            CodeSystem::Diagnosis => TokenKind::Dx,
            CodeSystem::Procedure => TokenKind::Px,
            CodeSystem::Medication => TokenKind::Rx,
        }
    }

    pub fn system(self) -> Option<CodeSystem> {
        match self {
            TokenKind::Dx => Some(CodeSystem::Diagnosis),
            TokenKind::Px => Some(CodeSystem::Procedure),
            TokenKind::Rx => Some(CodeSystem::Medication),
            _ => None,
        }
    }
}

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const MASK: &str = "[MASK]";
pub const SPECIALS: [&str; 4] = [PAD, UNK, CLS, MASK];

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
pub const MASK_ID: u32 = 3;

/// The kind implied by a surface's prefix; `None` for unrecognized surfaces.
pub fn kind_of(surface: &str) -> Option<TokenKind> {
    if SPECIALS.contains(&surface) {
        return Some(TokenKind::Special);
    }
    let (prefix, rest) = surface.split_once('_')?;
    if rest.is_empty() {
        return None;
    }
    match prefix {
        "AGE" => Some(TokenKind::Age),
        "SEX" => Some(TokenKind::Sex),
        "DX" => Some(TokenKind::Dx),
        "PX" => Some(TokenKind::Px),
        "RX" => Some(TokenKind::Rx),
        _ => None,
    }
}

pub fn code_surface(code: &MedicalCode) -> String {
    format!("{}_{}", code.system().tag(), code.value())
}

pub fn code_of_surface(surface: &str) -> Option<MedicalCode> {
    let kind = kind_of(surface)?;
    let (_, value) = surface.split_once('_')?;
    parse_code(kind.system()?, value).ok()
}

pub fn age_surface(bucket: &AgeBucket) -> String {
    format!("AGE_{}", bucket.label())
}

pub fn sex_surface(sex: Sex) -> String {
    match sex {
        Sex::F => "SEX_F".into(),
        Sex::M => "SEX_M".into(),
    }
}

/// Lower bound encoded in an `AGE_lo-hi` or `AGE_lo+` surface.
pub(crate) fn age_lower_bound(surface: &str) -> Option<u32> {
    let label = surface.strip_prefix("AGE_")?;
    let lo = label.split(['-', '+']).next()?;
    lo.parse().ok()
}
