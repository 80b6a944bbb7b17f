//! NSW → spoken-form renderers, one process function per pattern label.
//!
//! Numeral conventions:
//! - positional readings group by 万 and 亿; interior zero runs read as one
//!   零, trailing zeros in a group are silent, a leading 一十 reads 十;
//! - with `use_liang`, a leading 2 in the 百, 千, 万 or 亿 place reads 两, and
//!   so does the number 2 itself; 2 in the 十 place always reads 二;
//! - decimals read the integer part positionally, then 点, then each
//!   fractional digit;
//! - spelled digit strings read 0 as 零 and 1 as 一, or 幺 with `use_yao`.

use crate::error::{Error, Result};
use crate::labels::{LabelId, RendererKind, Taxonomy};
use crate::legality::FormatRegistry;

const DIGITS: [char; 10] = ['零', '一', '二', '三', '四', '五', '六', '七', '八', '九'];
const SMALL_UNITS: [&str; 4] = ["", "十", "百", "千"];
const GROUP_UNITS: [&str; 3] = ["", "万", "亿"];

/// Upper bound (exclusive) for positional readings.
pub const MAX_POSITIONAL: u64 = 1_000_000_000_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedSfw {
    pub text: String,
    pub source: String,
    pub label: LabelId,
}

fn not_digits(input: &str) -> Error {
    Error::Render {
        surface: input.to_string(),
        label: "numeral".into(),
        message: "expected a non-empty ASCII digit string".into(),
    }
}

fn parse_digits(digits: &str) -> Result<u64> {
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return Err(not_digits(digits));
    }
    let trimmed = digits.trim_start_matches('0');
    if trimmed.len() > 12 {
        return Err(Error::Render {
            surface: digits.to_string(),
            label: "numeral".into(),
            message: "magnitude must be below 10^12".into(),
        });
    }
    Ok(trimmed.parse::<u64>().unwrap_or(0))
}

/// Standard positional reading of a digit string below 10^12.
pub fn read_number_positional(digits: &str, use_liang: bool) -> Result<String> {
    let n = parse_digits(digits)?;
    Ok(read_integer(n, use_liang))
}

fn read_integer(n: u64, use_liang: bool) -> String {
    debug_assert!(n < MAX_POSITIONAL);
    if n == 0 {
        return DIGITS[0].to_string();
    }
    if use_liang && n == 2 {
        return "两".into();
    }
    let groups = [n / 100_000_000, (n / 10_000) % 10_000, n % 10_000];
    let mut out = String::new();
    let mut pending_zero = false;
    for (k, &g) in groups.iter().enumerate() {
        let unit = GROUP_UNITS[2 - k];
        if g == 0 {
            if !out.is_empty() {
                pending_zero = true;
            }
            continue;
        }
        let leading = out.is_empty();
        if !leading && (pending_zero || g < 1000) {
            out.push('零');
        }
        read_group(g, leading, use_liang && leading, !unit.is_empty(), &mut out);
        out.push_str(unit);
        pending_zero = false;
    }
    out
}

/// Reads 1..=9999. `leading` enables the 一十 → 十 reduction; `liang` reads a
/// leading 2 as 两 in the 百/千 place, or in the ones place when the group
/// carries a 万/亿 unit.
fn read_group(g: u64, leading: bool, liang: bool, has_group_unit: bool, out: &mut String) {
    debug_assert!((1..10_000).contains(&g));
    let digits = [g / 1000, (g / 100) % 10, (g / 10) % 10, g % 10];
    let first = digits.iter().position(|&d| d != 0).unwrap_or(3);
    let mut zero = false;
    for (i, &d) in digits.iter().enumerate().skip(first) {
        let place = 3 - i;
        if d == 0 {
            zero = true;
            continue;
        }
        if zero {
            out.push('零');
            zero = false;
        }
        let is_first = i == first;
        if is_first && leading && place == 1 && d == 1 {
            out.push('十');
            continue;
        }
        let liang_here =
            is_first && liang && d == 2 && (place >= 2 || (place == 0 && has_group_unit));
        out.push(if liang_here {
            '两'
        } else {
            DIGITS[d as usize]
        });
        out.push_str(SMALL_UNITS[place]);
    }
}

/// Digit-by-digit reading.
pub fn spell_digits(digits: &str, use_yao: bool) -> Result<String> {
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return Err(not_digits(digits));
    }
    Ok(digits
        .bytes()
        .map(|b| match b - b'0' {
            1 if use_yao => '幺',
            d => DIGITS[d as usize],
        })
        .collect())
}

/// `123.45` → 一百二十三点四五; commas are thousands separators.
fn read_decimal(surface: &str) -> Result<String> {
    let plain: String = surface.chars().filter(|&c| c != ',').collect();
    match plain.split_once('.') {
        Some((int, frac)) => {
            let mut s = read_number_positional(int, false)?;
            s.push('点');
            s.push_str(&spell_digits(frac, false)?);
            Ok(s)
        }
        None => read_number_positional(&plain, false),
    }
}

fn split_once_any<'a>(s: &'a str, seps: &[char]) -> Option<(&'a str, &'a str)> {
    let i = s.find(seps)?;
    let sep_len = s[i..].chars().next().map_or(1, char::len_utf8);
    Some((&s[..i], &s[i + sep_len..]))
}

fn read_time(surface: &str) -> Result<String> {
    let mut parts = surface.split(':');
    let hour = parts.next().unwrap_or_default();
    let minute = parts.next().unwrap_or_default();
    let second = parts.next();
    let mut s = read_number_positional(hour, true)?;
    s.push('点');
    let second_spoken = match second {
        Some(sec) if parse_digits(sec)? != 0 => Some(clock_field(sec)?),
        _ => None,
    };
    if parse_digits(minute)? != 0 || second_spoken.is_some() {
        s.push_str(&clock_field(minute)?);
        s.push('分');
    }
    if let Some(sec) = second_spoken {
        s.push_str(&sec);
        s.push('秒');
    }
    Ok(s)
}

/// Two-digit clock field: 05 → 零五, 00 → 零, 30 → 三十.
fn clock_field(field: &str) -> Result<String> {
    let n = parse_digits(field)?;
    Ok(if field.len() == 2 && field.starts_with('0') && n != 0 {
        format!("零{}", DIGITS[n as usize])
    } else {
        read_integer(n, false)
    })
}

fn read_date(surface: &str) -> Result<String> {
    let fields: Vec<&str> = surface.split(['-', '/', '.']).collect();
    let [year, month, day] = fields.as_slice() else {
        return Err(Error::Render {
            surface: surface.into(),
            label: "date".into(),
            message: "expected year, month and day".into(),
        });
    };
    Ok(format!(
        "{}年{}月{}日",
        spell_digits(year, false)?,
        read_number_positional(month, false)?,
        read_number_positional(day, false)?
    ))
}

/// Renders `surface` with the process function of `kind`. Fails on surfaces
/// the function cannot read; callers verify legality first.
pub fn render_kind(surface: &str, kind: RendererKind) -> Result<String> {
    let err = |message: &str| Error::Render {
        surface: surface.into(),
        label: format!("{kind:?}"),
        message: message.into(),
    };
    match kind {
        RendererKind::ReadNumber => read_decimal(surface),
        RendererKind::SpellDigits => spell_digits(surface, false),
        RendererKind::SpellYao => spell_digits(surface, true),
        RendererKind::TwoLiang => read_number_positional(surface, true),
        RendererKind::Percent => {
            let n = surface.strip_suffix('%').ok_or_else(|| err("missing %"))?;
            Ok(format!("百分之{}", read_decimal(n)?))
        }
        RendererKind::Range => {
            let (a, b) = split_once_any(surface, &['-', '~', '—'])
                .ok_or_else(|| err("missing range separator"))?;
            Ok(format!("{}到{}", read_decimal(a)?, read_decimal(b)?))
        }
        RendererKind::ScoreRatio => {
            let (a, b) = split_once_any(surface, &['-', ':'])
                .ok_or_else(|| err("missing score separator"))?;
            Ok(format!(
                "{}比{}",
                read_number_positional(a, false)?,
                read_number_positional(b, false)?
            ))
        }
        RendererKind::SlashPer => {
            let n = surface.strip_suffix('/').ok_or_else(|| err("missing /"))?;
            Ok(format!("{}每", read_decimal(n)?))
        }
        RendererKind::Time => read_time(surface),
        RendererKind::DateYmd => read_date(surface),
        RendererKind::Currency => {
            let n = surface.strip_prefix('$').ok_or_else(|| err("missing $"))?;
            Ok(format!("{}美元", read_decimal(n)?))
        }
    }
}

/// Dispatch table from label to process function.
#[derive(Debug, Clone)]
pub struct PatternReader {
    kinds: Vec<RendererKind>,
    names: Vec<String>,
    formats: FormatRegistry,
}

impl PatternReader {
    pub fn new(taxonomy: &Taxonomy) -> Result<Self> {
        Ok(Self {
            kinds: taxonomy.labels().iter().map(|l| l.renderer).collect(),
            names: taxonomy.names(),
            formats: FormatRegistry::new(taxonomy)?,
        })
    }

    pub fn render(&self, surface: &str, label: LabelId) -> Result<RenderedSfw> {
        let kind = *self
            .kinds
            .get(label.index())
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))?;
        if !self.formats.verify(surface, label)? {
            return Err(Error::Render {
                surface: surface.into(),
                label: self.names[label.index()].clone(),
                message: "surface does not match the label format".into(),
            });
        }
        Ok(RenderedSfw {
            text: render_kind(surface, kind)?,
            source: surface.to_string(),
            label,
        })
    }
}
