//! Civil calendar days.

use alloc::string::{String, ToString};
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;

pub const DAY_SECS: i64 = 86_400;

/// A calendar day, counted from 1970-01-01. Serialises as `YYYY-MM-DD`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Day(pub i64);

impl Day {
    pub fn from_ymd(y: i64, m: u32, d: u32) -> Option<Self> {
        if !(1..=12).contains(&m) || d == 0 || d > days_in_month(y, m) {
            return None;
        }
        // days_from_civil (H. Hinnant)
        let y = if m <= 2 { y - 1 } else { y };
        let era = y.div_euclid(400);
        let yoe = y - era * 400;
        let mp = (m as i64 + 9) % 12;
        let doy = (153 * mp + 2) / 5 + d as i64 - 1;
        let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
        Some(Day(era * 146_097 + doe - 719_468))
    }

    pub fn ymd(self) -> (i64, u32, u32) {
        let z = self.0 + 719_468;
        let era = z.div_euclid(146_097);
        let doe = z - era * 146_097;
        let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
        let y = yoe + era * 400;
        let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
        let mp = (5 * doy + 2) / 153;
        let d = (doy - (153 * mp + 2) / 5 + 1) as u32;
        let m = if mp < 10 { mp + 3 } else { mp - 9 } as u32;
        (if m <= 2 { y + 1 } else { y }, m, d)
    }

    pub fn plus(self, days: i64) -> Self {
        Day(self.0 + days)
    }

    /// UTC timestamp of local midnight for a site `offset_minutes` east of UTC.
    pub fn midnight_utc(self, offset_minutes: i32) -> i64 {
        self.0 * DAY_SECS - offset_minutes as i64 * 60
    }

    /// Local calendar day containing UTC timestamp `ts`.
    pub fn of_timestamp(ts: i64, offset_minutes: i32) -> Self {
        Day((ts + offset_minutes as i64 * 60).div_euclid(DAY_SECS))
    }
}

fn days_in_month(y: i64, m: u32) -> u32 {
    match m {
        1 | 3 | 5 | 7 | 8 | 10 | 12 => 31,
        4 | 6 | 9 | 11 => 30,
        _ if (y % 4 == 0 && y % 100 != 0) || y % 400 == 0 => 29,
        _ => 28,
    }
}

impl fmt::Display for Day {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (y, m, d) = self.ymd();
        write!(f, "{y:04}-{m:02}-{d:02}")
    }
}

impl FromStr for Day {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let bad = || Error::InvalidConfig(alloc::format!("invalid ISO-8601 date {s:?}"));
        let mut it = s.trim().splitn(3, '-');
        let y = it.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        let m = it.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        let d = it.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        Day::from_ymd(y, m, d).ok_or_else(bad)
    }
}

impl Serialize for Day {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Day {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epoch_and_known_dates() {
        assert_eq!(Day::from_ymd(1970, 1, 1), Some(Day(0)));
        assert_eq!(Day::from_ymd(2020, 2, 21).unwrap().0, 18_313);
        assert_eq!("2020-05-20".parse::<Day>().unwrap().to_string(), "2020-05-20");
        assert!("2020-02-30".parse::<Day>().is_err());
    }

    #[test]
    fn round_trip_over_a_wide_range() {
        for d in -800_000..800_000i64 {
            if d % 997 != 0 {
                continue;
            }
            let (y, m, dd) = Day(d).ymd();
            assert_eq!(Day::from_ymd(y, m, dd), Some(Day(d)));
        }
    }

    #[test]
    fn local_midnight() {
        let day = Day::from_ymd(2020, 3, 1).unwrap();
        let ts = day.midnight_utc(60);
        assert_eq!(Day::of_timestamp(ts, 60), day);
        assert_eq!(Day::of_timestamp(ts - 1, 60), day.plus(-1));
    }
}
