use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, NaiveTime};

/// Meteorological seasons.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Season {
    Djf,
    Mam,
    Jja,
    Son,
}

impl Season {
    pub const ALL: [Season; 4] = [Season::Djf, Season::Mam, Season::Jja, Season::Son];

    pub fn of(date: NaiveDate) -> Season {
        match date.month() {
            12 | 1 | 2 => Season::Djf,
            3..=5 => Season::Mam,
            6..=8 => Season::Jja,
            _ => Season::Son,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Season::Djf => "DJF",
            Season::Mam => "MAM",
            Season::Jja => "JJA",
            Season::Son => "SON",
        }
    }
}

pub fn day(start: NaiveDate, offset: usize) -> NaiveDate {
    start + Duration::days(offset as i64)
}

/// Timestamp of six-hourly step `step` counted from midnight of `start`.
pub fn six_hourly(start: NaiveDate, step: usize) -> NaiveDateTime {
    start.and_time(NaiveTime::MIN) + Duration::hours(6 * step as i64)
}

pub fn parse_date(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn month_groups() {
        let d = |m| NaiveDate::from_ymd_opt(2001, m, 15).unwrap();
        let got: Vec<_> = (1..=12).map(|m| Season::of(d(m)).label()).collect();
        assert_eq!(got, ["DJF", "DJF", "MAM", "MAM", "MAM", "JJA", "JJA", "JJA", "SON", "SON", "SON", "DJF"]);
    }

    #[test]
    fn step_timestamps() {
        let s = NaiveDate::from_ymd_opt(2000, 2, 28).unwrap();
        assert_eq!(six_hourly(s, 7).to_string(), "2000-02-29 18:00:00");
        assert_eq!(day(s, 2), NaiveDate::from_ymd_opt(2000, 3, 1).unwrap());
    }
}
