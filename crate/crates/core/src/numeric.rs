//! Exact decimal parsing and extraction of numeric tokens from free text.

use std::fmt;

/// An exact decimal value: `mantissa * 10^(-scale)`, normalized so the
/// fractional part has no trailing zeros. "72", "72.0", and "72.00" all
/// normalize to the same value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ExactDecimal {
    mantissa: i128,
    scale: u32,
}

impl ExactDecimal {
    pub fn from_int(value: i128) -> Self {
        Self { mantissa: value, scale: 0 }
    }

    /// Parses a plain decimal string: optional sign, digits, optional
    /// fractional part. Thousands separators and currency symbols must
    /// already be stripped.
    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim();
        let (neg, digits) = match s.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, s.strip_prefix('+').unwrap_or(s)),
        };
        if digits.is_empty() {
            return None;
        }
        let (int_part, frac_part) = match digits.split_once('.') {
            Some((i, f)) => (i, f),
            None => (digits, ""),
        };
        if int_part.is_empty() && frac_part.is_empty() {
            return None;
        }
        if !int_part.chars().all(|c| c.is_ascii_digit())
            || !frac_part.chars().all(|c| c.is_ascii_digit())
        {
            return None;
        }
        let frac_trimmed = frac_part.trim_end_matches('0');
        let mut mantissa: i128 = 0;
        for c in int_part.chars().chain(frac_trimmed.chars()) {
            mantissa = mantissa
                .checked_mul(10)?
                .checked_add((c as u8 - b'0') as i128)?;
        }
        if neg {
            mantissa = -mantissa;
        }
        Some(Self {
            mantissa,
            scale: frac_trimmed.len() as u32,
        })
    }
}

impl fmt::Display for ExactDecimal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.scale == 0 {
            return write!(f, "{}", self.mantissa);
        }
        let sign = if self.mantissa < 0 { "-" } else { "" };
        let abs = self.mantissa.unsigned_abs();
        let pow = 10u128.pow(self.scale);
        write!(
            f,
            "{sign}{}.{:0width$}",
            abs / pow,
            abs % pow,
            width = self.scale as usize
        )
    }
}

/// Scans text for numeric tokens: optional leading minus (only when not
/// glued to a preceding digit, so "3-7" yields 3 and 7 rather than -7),
/// digit-grouped thousands separators, and one decimal point. Currency
/// symbols before the digits and trailing punctuation are not part of the
/// token.
pub fn find_numbers(text: &str) -> Vec<ExactDecimal> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if !bytes[i].is_ascii_digit() {
            i += 1;
            continue;
        }
        let mut start = i;
        // A minus is a sign only when whatever precedes it is not a digit.
        if start > 0 && bytes[start - 1] == b'-' && (start < 2 || !bytes[start - 2].is_ascii_digit())
        {
            start -= 1;
        }
        let mut end = i;
        let mut seen_dot = false;
        while end < bytes.len() {
            let c = bytes[end];
            let next_is_digit = end + 1 < bytes.len() && bytes[end + 1].is_ascii_digit();
            if c.is_ascii_digit() || (c == b',' && next_is_digit) {
                end += 1;
            } else if c == b'.' && !seen_dot && next_is_digit {
                seen_dot = true;
                end += 1;
            } else {
                break;
            }
        }
        let token: String = text[start..end].chars().filter(|&c| c != ',').collect();
        if let Some(value) = ExactDecimal::parse(&token) {
            out.push(value);
        }
        i = end.max(i + 1);
    }
    out
}

/// The last numeric token in the text, if any.
pub fn extract_last_number(text: &str) -> Option<ExactDecimal> {
    find_numbers(text).pop()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_makes_trailing_zeros_equal() {
        let a = ExactDecimal::parse("72").unwrap();
        let b = ExactDecimal::parse("72.0").unwrap();
        let c = ExactDecimal::parse("72.00").unwrap();
        assert_eq!(a, b);
        assert_eq!(b, c);
    }

    #[test]
    fn distinct_values_stay_distinct() {
        assert_ne!(
            ExactDecimal::parse("72.5").unwrap(),
            ExactDecimal::parse("72").unwrap()
        );
        assert_ne!(
            ExactDecimal::parse("-3").unwrap(),
            ExactDecimal::parse("3").unwrap()
        );
    }

    #[test]
    fn currency_and_trailing_punctuation_stripped() {
        assert_eq!(
            extract_last_number("purchases was $280."),
            Some(ExactDecimal::from_int(280))
        );
    }

    #[test]
    fn no_digits_yields_none() {
        assert_eq!(extract_last_number("no digits here"), None);
    }

    #[test]
    fn thousands_separators_and_negatives() {
        let nums = find_numbers("values 1,234.5 then -7");
        assert_eq!(nums.len(), 2);
        assert_eq!(nums[0], ExactDecimal::parse("1234.5").unwrap());
        assert_eq!(nums[1], ExactDecimal::from_int(-7));
        assert_eq!(extract_last_number("values 1,234.5 then -7"), Some(ExactDecimal::from_int(-7)));
    }

    #[test]
    fn hyphen_between_digits_is_not_a_sign() {
        let nums = find_numbers("pages 3-7");
        assert_eq!(nums, vec![ExactDecimal::from_int(3), ExactDecimal::from_int(7)]);
    }

    #[test]
    fn decimal_without_following_digit_is_sentence_punctuation() {
        assert_eq!(extract_last_number("the answer is 4."), Some(ExactDecimal::from_int(4)));
    }

    #[test]
    fn display_round_trips() {
        for s in ["72", "-7", "1234.5", "0.25", "-0.5"] {
            let v = ExactDecimal::parse(s).unwrap();
            assert_eq!(ExactDecimal::parse(&v.to_string()).unwrap(), v);
        }
    }
}
