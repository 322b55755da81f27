use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A Gregorian calendar day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct DateStamp(NaiveDate);

impl DateStamp {
    pub fn from_ymd(year: i32, month: u32, day: u32) -> Result<Self> {
        NaiveDate::from_ymd_opt(year, month, day)
            .map(DateStamp)
            .ok_or_else(|| Error::InvalidArgument(format!("no such date {year}-{month}-{day}")))
    }

    /// Parses `YYYY-MM-DD`.
    pub fn parse(s: &str) -> Result<Self> {
        NaiveDate::parse_from_str(s, "%Y-%m-%d")
            .map(DateStamp)
            .map_err(|_| Error::InvalidArgument(format!("expected YYYY-MM-DD date, got `{s}`")))
    }

    pub fn year(&self) -> i32 {
        self.0.year()
    }

    pub fn month(&self) -> u32 {
        self.0.month()
    }

    pub fn day_of_month(&self) -> u32 {
        self.0.day()
    }

    pub fn day_of_year(&self) -> u32 {
        self.0.ordinal()
    }

    pub fn is_leap_year(&self) -> bool {
        self.0.leap_year()
    }

    pub fn days_in_year(&self) -> u32 {
        if self.is_leap_year() {
            366
        } else {
            365
        }
    }

    /// Signed day difference `other - self`.
    pub fn days_until(&self, other: DateStamp) -> i64 {
        (other.0 - self.0).num_days()
    }

    pub fn succ(&self) -> Option<DateStamp> {
        self.0.succ_opt().map(DateStamp)
    }

    pub fn plus_days(&self, days: u64) -> Option<DateStamp> {
        self.0
            .checked_add_days(chrono::Days::new(days))
            .map(DateStamp)
    }

    /// Every day from `start` to `end`, inclusive.
    pub fn range_inclusive(start: DateStamp, end: DateStamp) -> impl Iterator<Item = DateStamp> {
        std::iter::successors(Some(start), move |d| d.succ().filter(|n| *n <= end))
            .take_while(move |d| *d <= end)
    }
}

impl fmt::Display for DateStamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.format("%Y-%m-%d"))
    }
}

impl FromStr for DateStamp {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        DateStamp::parse(s)
    }
}

impl TryFrom<String> for DateStamp {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        DateStamp::parse(&s)
    }
}

impl From<DateStamp> for String {
    fn from(d: DateStamp) -> String {
        d.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn calendar_fields() {
        let d = DateStamp::parse("2016-12-31").unwrap();
        assert_eq!((d.year(), d.month(), d.day_of_month()), (2016, 12, 31));
        assert_eq!(d.day_of_year(), 366);
        assert_eq!(d.days_in_year(), 366);
        assert_eq!(DateStamp::parse("2015-12-31").unwrap().day_of_year(), 365);
        assert!(DateStamp::parse("2015-02-29").is_err());
        assert!(DateStamp::from_ymd(2016, 2, 29).is_ok());
        assert_eq!(d.to_string(), "2016-12-31");
    }

    #[test]
    fn ranges() {
        let a = DateStamp::parse("2020-02-27").unwrap();
        let b = DateStamp::parse("2020-03-01").unwrap();
        let days: Vec<_> = DateStamp::range_inclusive(a, b)
            .map(|d| d.to_string())
            .collect();
        assert_eq!(
            days,
            ["2020-02-27", "2020-02-28", "2020-02-29", "2020-03-01"]
        );
        assert_eq!(DateStamp::range_inclusive(b, a).count(), 0);
        assert_eq!(a.days_until(b), 3);
    }
}
