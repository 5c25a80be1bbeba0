//! Step calendar: maps a step of the year to a calendar month and a length.
//!
//! Monthly runs use the twelve calendar months of a non-leap year. Weekly runs
//! use 52 equal weeks of 7 days; the trailing day (or two, in leap years) is
//! folded into week 52. Each week belongs to the month its first day falls in.

pub const DAYS_IN_MONTH: [u32; 12] = [31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31];

pub const MONTH_NAMES: [&str; 12] = [
    "Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec",
];

/// Calendar month (0 = January) of step `step_of_year`.
pub fn month_of_step(steps_per_year: usize, step_of_year: usize) -> usize {
    match steps_per_year {
        12 => step_of_year % 12,
        _ => {
            let day = (step_of_year % steps_per_year) as u32 * 7;
            let mut acc = 0;
            for (m, d) in DAYS_IN_MONTH.iter().enumerate() {
                acc += d;
                if day < acc {
                    return m;
                }
            }
            11
        }
    }
}

/// Length of the step in days.
pub fn days_in_step(steps_per_year: usize, step_of_year: usize) -> f64 {
    match steps_per_year {
        12 => f64::from(DAYS_IN_MONTH[step_of_year % 12]),
        _ => 7.0,
    }
}

/// Fraction of the calendar month's evaporation that falls in this step.
pub fn month_fraction(steps_per_year: usize, step_of_year: usize) -> f64 {
    match steps_per_year {
        12 => 1.0,
        _ => {
            let m = month_of_step(steps_per_year, step_of_year);
            7.0 / f64::from(DAYS_IN_MONTH[m])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weekly_months() {
        assert_eq!(month_of_step(52, 0), 0);
        assert_eq!(month_of_step(52, 4), 0); // day 28
        assert_eq!(month_of_step(52, 5), 1); // day 35
        assert_eq!(month_of_step(52, 51), 11);
        assert_eq!(days_in_step(52, 51), 7.0);
    }

    #[test]
    fn monthly_lengths() {
        assert_eq!(days_in_step(12, 1), 28.0);
        assert_eq!(days_in_step(12, 3), 30.0);
        assert_eq!(month_fraction(12, 6), 1.0);
        assert!((month_fraction(52, 0) - 7.0 / 31.0).abs() < 1e-15);
    }
}
