//! Shared domain types: places, opening hours, money, QA records and
//! reasoning chains.
//!
//! Every type here is a plain immutable value. Field order is the canonical
//! record order used by the line-delimited encoders in the companion crate.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Version of the line-delimited record encoding of these types.
pub const RECORD_FORMAT_VERSION: u32 = 1;

/// Minutes in a day; the upper bound of every [`TimeWindow`].
pub const DAY_MINUTES: u16 = 1440;

/// Scheduling granularity in minutes.
pub const GRID_MINUTES: u16 = 5;

/// Outcome of a validation pass: every violation found, in discovery order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict<V> {
    pub violations: Vec<V>,
}

impl<V> Verdict<V> {
    pub fn ok() -> Self {
        Verdict { violations: Vec::new() }
    }

    pub fn from_violations(violations: Vec<V>) -> Self {
        Verdict { violations }
    }

    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl<V> Default for Verdict<V> {
    fn default() -> Self {
        Self::ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weekday {
    Mon,
    Tue,
    Wed,
    Thu,
    Fri,
    Sat,
    Sun,
}

impl Weekday {
    pub const ALL: [Weekday; 7] = [
        Weekday::Mon,
        Weekday::Tue,
        Weekday::Wed,
        Weekday::Thu,
        Weekday::Fri,
        Weekday::Sat,
        Weekday::Sun,
    ];

    pub fn succ(self) -> Weekday {
        let idx = Self::ALL.iter().position(|d| *d == self).unwrap_or(0);
        Self::ALL[(idx + 1) % 7]
    }

    pub fn from_name(name: &str) -> Option<Weekday> {
        let lower = name.to_lowercase();
        let day = match lower.get(..3)? {
            "mon" => Weekday::Mon,
            "tue" => Weekday::Tue,
            "wed" => Weekday::Wed,
            "thu" => Weekday::Thu,
            "fri" => Weekday::Fri,
            "sat" => Weekday::Sat,
            "sun" => Weekday::Sun,
            _ => return None,
        };
        Some(day)
    }
}

impl fmt::Display for Weekday {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Weekday::Mon => "Mon",
            Weekday::Tue => "Tue",
            Weekday::Wed => "Wed",
            Weekday::Thu => "Thu",
            Weekday::Fri => "Fri",
            Weekday::Sat => "Sat",
            Weekday::Sun => "Sun",
        };
        f.write_str(s)
    }
}

/// A span of the day in minutes since midnight, both ends inclusive of the
/// boundary instant. Zero-length windows are allowed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TimeWindow {
    pub start: u16,
    pub end: u16,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WindowError {
    #[error("window inverted: start {start} is after end {end}")]
    Inverted { start: u16, end: u16 },
    #[error("window bound {0} is past the end of the day")]
    OutOfDay(u16),
    #[error("window bound {0} is not on the {GRID_MINUTES}-minute grid")]
    OffGrid(u16),
}

impl TimeWindow {
    pub fn new(start: u16, end: u16) -> Result<Self, WindowError> {
        let w = TimeWindow { start, end };
        match w.problems().into_iter().next() {
            Some(e) => Err(e),
            None => Ok(w),
        }
    }

    /// Every invariant this window breaks.
    pub fn problems(&self) -> Vec<WindowError> {
        let mut out = Vec::new();
        for bound in [self.start, self.end] {
            if bound > DAY_MINUTES {
                out.push(WindowError::OutOfDay(bound));
            }
        }
        for bound in [self.start, self.end] {
            if bound % GRID_MINUTES != 0 {
                out.push(WindowError::OffGrid(bound));
            }
        }
        if self.start > self.end {
            out.push(WindowError::Inverted { start: self.start, end: self.end });
        }
        out
    }

    pub fn len(&self) -> u16 {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, other: &TimeWindow) -> bool {
        self.start <= other.start && other.end <= self.end
    }
}

impl fmt::Display for TimeWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", Clock(self.start), Clock(self.end))
    }
}

/// Formats minutes since midnight as `HH:MM`.
#[derive(Debug, Clone, Copy)]
pub struct Clock(pub u16);

impl fmt::Display for Clock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:02}:{:02}", self.0 / 60, self.0 % 60)
    }
}

/// Intersection of two windows, or `None` when they do not meet. Windows
/// that only touch yield a zero-length window.
pub fn window_overlap(a: TimeWindow, b: TimeWindow) -> Option<TimeWindow> {
    let start = a.start.max(b.start);
    let end = a.end.min(b.end);
    (start <= end).then_some(TimeWindow { start, end })
}

/// Latitude/longitude held as integer micro-degrees so equality is exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GeoPoint {
    lat_e6: i32,
    lon_e6: i32,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeoError {
    #[error("latitude {0} outside [-90, 90]")]
    Latitude(f64),
    #[error("longitude {0} outside [-180, 180]")]
    Longitude(f64),
}

impl GeoPoint {
    pub fn from_degrees(lat: f64, lon: f64) -> Result<Self, GeoError> {
        if !(-90.0..=90.0).contains(&lat) {
            return Err(GeoError::Latitude(lat));
        }
        if !(-180.0..=180.0).contains(&lon) {
            return Err(GeoError::Longitude(lon));
        }
        Ok(GeoPoint {
            lat_e6: libm::round(lat * 1e6) as i32,
            lon_e6: libm::round(lon * 1e6) as i32,
        })
    }

    pub fn from_micro_degrees(lat_e6: i32, lon_e6: i32) -> Result<Self, GeoError> {
        Self::from_degrees(lat_e6 as f64 / 1e6, lon_e6 as f64 / 1e6)
    }

    pub fn lat(&self) -> f64 {
        self.lat_e6 as f64 / 1e6
    }

    pub fn lon(&self) -> f64 {
        self.lon_e6 as f64 / 1e6
    }
}

#[derive(Serialize, Deserialize)]
struct GeoWire {
    lat: f64,
    lon: f64,
}

impl Serialize for GeoPoint {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        GeoWire { lat: self.lat(), lon: self.lon() }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for GeoPoint {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let w = GeoWire::deserialize(d)?;
        GeoPoint::from_degrees(w.lat, w.lon).map_err(serde::de::Error::custom)
    }
}

/// ISO-4217 alphabetic code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Currency([u8; 3]);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid currency code {0:?}: expected three uppercase letters")]
pub struct CurrencyError(pub String);

impl Currency {
    pub const USD: Currency = Currency(*b"USD");
    pub const EUR: Currency = Currency(*b"EUR");
    pub const GBP: Currency = Currency(*b"GBP");
    pub const JPY: Currency = Currency(*b"JPY");
    pub const CNY: Currency = Currency(*b"CNY");

    pub fn new(code: &str) -> Result<Self, CurrencyError> {
        let bytes = code.as_bytes();
        if bytes.len() != 3 || !bytes.iter().all(u8::is_ascii_uppercase) {
            return Err(CurrencyError(code.into()));
        }
        Ok(Currency([bytes[0], bytes[1], bytes[2]]))
    }

    pub fn code(&self) -> &str {
        core::str::from_utf8(&self.0).unwrap_or("???")
    }

    /// Number of minor-unit digits.
    pub fn exponent(&self) -> u32 {
        match &self.0 {
            b"JPY" | b"KRW" | b"VND" | b"ISK" => 0,
            _ => 2,
        }
    }
}

impl fmt::Display for Currency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl Serialize for Currency {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.code())
    }
}

impl<'de> Deserialize<'de> for Currency {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Currency::new(&s).map_err(serde::de::Error::custom)
    }
}

/// A non-negative amount in integer minor units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Money {
    pub amount: u64,
    pub currency: Currency,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MoneyError {
    #[error("currency mismatch: {0} vs {1}")]
    CurrencyMismatch(Currency, Currency),
    #[error("amount overflow")]
    Overflow,
}

impl Money {
    pub fn new(amount: u64, currency: Currency) -> Self {
        Money { amount, currency }
    }

    pub fn zero(currency: Currency) -> Self {
        Money { amount: 0, currency }
    }

    pub fn checked_add(self, other: Money) -> Result<Money, MoneyError> {
        if self.currency != other.currency {
            return Err(MoneyError::CurrencyMismatch(self.currency, other.currency));
        }
        let amount = self.amount.checked_add(other.amount).ok_or(MoneyError::Overflow)?;
        Ok(Money { amount, currency: self.currency })
    }

    pub fn checked_sub(self, other: Money) -> Result<Option<Money>, MoneyError> {
        if self.currency != other.currency {
            return Err(MoneyError::CurrencyMismatch(self.currency, other.currency));
        }
        Ok(self
            .amount
            .checked_sub(other.amount)
            .map(|amount| Money { amount, currency: self.currency }))
    }

    pub fn times(self, n: u32) -> Result<Money, MoneyError> {
        let amount = self.amount.checked_mul(n as u64).ok_or(MoneyError::Overflow)?;
        Ok(Money { amount, currency: self.currency })
    }
}

impl fmt::Display for Money {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let exp = self.currency.exponent();
        if exp == 0 {
            return write!(f, "{} {}", self.amount, self.currency);
        }
        let scale = 10u64.pow(exp);
        write!(
            f,
            "{}.{:0width$} {}",
            self.amount / scale,
            self.amount % scale,
            self.currency,
            width = exp as usize
        )
    }
}

/// The six place categories of the dataset. Anything else is carried as
/// [`Category::Unrecognized`] so validation can report it by name.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Category {
    Attractions,
    Dining,
    Living,
    Transportation,
    Cultural,
    Practical,
    Unrecognized(String),
}

impl Category {
    pub const ALL: [Category; 6] = [
        Category::Attractions,
        Category::Dining,
        Category::Living,
        Category::Transportation,
        Category::Cultural,
        Category::Practical,
    ];

    pub fn name(&self) -> &str {
        match self {
            Category::Attractions => "Attractions",
            Category::Dining => "Dining",
            Category::Living => "Living",
            Category::Transportation => "Transportation",
            Category::Cultural => "Cultural",
            Category::Practical => "Practical",
            Category::Unrecognized(s) => s,
        }
    }

    pub fn parse(name: &str) -> Category {
        Self::ALL
            .iter()
            .find(|c| c.name().eq_ignore_ascii_case(name.trim()))
            .cloned()
            .unwrap_or_else(|| Category::Unrecognized(name.into()))
    }

    pub fn is_known(&self) -> bool {
        !matches!(self, Category::Unrecognized(_))
    }

    /// Position in [`Category::ALL`], if known.
    pub fn index(&self) -> Option<usize> {
        Self::ALL.iter().position(|c| c == self)
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for Category {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Category {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(Category::parse(&s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AccessFlag {
    Wheelchair,
    ElderFriendly,
    StrollerFriendly,
    StepFree,
}

impl fmt::Display for AccessFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AccessFlag::Wheelchair => "wheelchair",
            AccessFlag::ElderFriendly => "elder-friendly",
            AccessFlag::StrollerFriendly => "stroller-friendly",
            AccessFlag::StepFree => "step-free",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageKind {
    Map,
    Street,
}

/// Opaque image descriptor. Pixels are never touched.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ImageRef {
    pub uri: String,
    pub kind: ImageKind,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DayHours {
    pub day: Weekday,
    pub window: TimeWindow,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Poi {
    pub id: String,
    pub name: String,
    pub category: Category,
    pub city: String,
    pub location: GeoPoint,
    pub hours: Vec<DayHours>,
    pub price: Money,
    /// Minutes on the scheduling grid.
    pub visit_duration: u16,
    pub utility: u32,
    #[serde(default)]
    pub accessibility: BTreeSet<AccessFlag>,
    #[serde(default)]
    pub images: Vec<ImageRef>,
}

impl Poi {
    /// Opening windows on `day`, sorted by start.
    pub fn windows_on(&self, day: Weekday) -> Vec<TimeWindow> {
        let mut out: Vec<TimeWindow> =
            self.hours.iter().filter(|h| h.day == day).map(|h| h.window).collect();
        out.sort();
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PoiViolation {
    #[error("empty id")]
    EmptyId,
    #[error("empty name")]
    EmptyName,
    #[error("empty city")]
    EmptyCity,
    #[error("category not in Table-1 set: {0}")]
    UnknownCategory(String),
    #[error("hours on {day}: {problem}")]
    Hours { day: Weekday, problem: WindowError },
    #[error("visit duration must be positive")]
    ZeroDuration,
    #[error("visit duration {0} is not on the {GRID_MINUTES}-minute grid")]
    DurationOffGrid(u16),
    #[error("visit duration {0} exceeds a day")]
    DurationTooLong(u16),
    #[error("image {0:?} has an empty uri")]
    EmptyImageUri(usize),
}

/// Checks every invariant of a place record and reports all violations.
pub fn validate_poi(poi: &Poi) -> Verdict<PoiViolation> {
    let mut v = Vec::new();
    if poi.id.trim().is_empty() {
        v.push(PoiViolation::EmptyId);
    }
    if poi.name.trim().is_empty() {
        v.push(PoiViolation::EmptyName);
    }
    if poi.city.trim().is_empty() {
        v.push(PoiViolation::EmptyCity);
    }
    if let Category::Unrecognized(name) = &poi.category {
        v.push(PoiViolation::UnknownCategory(name.clone()));
    }
    for h in &poi.hours {
        for problem in h.window.problems() {
            v.push(PoiViolation::Hours { day: h.day, problem });
        }
    }
    if poi.visit_duration == 0 {
        v.push(PoiViolation::ZeroDuration);
    } else if !poi.visit_duration.is_multiple_of(GRID_MINUTES) {
        v.push(PoiViolation::DurationOffGrid(poi.visit_duration));
    }
    if poi.visit_duration > DAY_MINUTES {
        v.push(PoiViolation::DurationTooLong(poi.visit_duration));
    }
    for (i, img) in poi.images.iter().enumerate() {
        if img.uri.trim().is_empty() {
            v.push(PoiViolation::EmptyImageUri(i));
        }
    }
    Verdict::from_violations(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Modality {
    Text,
    VisionLanguage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VlType {
    Identification,
    Experience,
    Practical,
}

impl VlType {
    pub const ALL: [VlType; 3] = [VlType::Identification, VlType::Experience, VlType::Practical];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    pub id: String,
    #[serde(default)]
    pub poi_id: Option<String>,
    pub modality: Modality,
    #[serde(default)]
    pub vl_type: Option<VlType>,
    pub question: String,
    pub answer: String,
    #[serde(default)]
    pub source_fact_id: Option<String>,
    #[serde(default)]
    pub split: Option<Split>,
    /// Category for records without a place; records with one inherit it.
    #[serde(default)]
    pub category: Option<Category>,
    /// The image a vision-language pair was generated from.
    #[serde(default)]
    pub image: Option<ImageRef>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum QaViolation {
    #[error("empty answer")]
    EmptyAnswer,
    #[error("vision-language pair without a QA type")]
    MissingVlType,
    #[error("text pair carries a vision-language QA type")]
    UnexpectedVlType,
}

pub fn validate_qa(qa: &QaPair) -> Verdict<QaViolation> {
    let mut v = Vec::new();
    if qa.answer.trim().is_empty() {
        v.push(QaViolation::EmptyAnswer);
    }
    match (qa.modality, qa.vl_type) {
        (Modality::VisionLanguage, None) => v.push(QaViolation::MissingVlType),
        (Modality::Text, Some(_)) => v.push(QaViolation::UnexpectedVlType),
        _ => {}
    }
    Verdict::from_violations(v)
}

/// Structured payload attached to a reasoning step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepPayload {
    /// Great-circle distance of a hop.
    Distance { meters: u64 },
    /// An available visiting window.
    Window { start: u16, end: u16 },
    /// No usable opening on the planned day.
    Closed,
    /// Running cost accumulation in minor units.
    Sum { items: Vec<u64>, total: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningStep {
    pub text: String,
    #[serde(default)]
    pub refs: Vec<String>,
    #[serde(default)]
    pub payload: Option<StepPayload>,
}

impl ReasoningStep {
    pub fn new(text: impl Into<String>) -> Self {
        ReasoningStep { text: text.into(), refs: Vec::new(), payload: None }
    }

    pub fn with_ref(mut self, id: impl ToString) -> Self {
        self.refs.push(id.to_string());
        self
    }

    pub fn with_payload(mut self, payload: StepPayload) -> Self {
        self.payload = Some(payload);
        self
    }
}

/// Three-part reasoning record: spatial, temporal and practical steps.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CoTChain {
    pub spatial: Vec<ReasoningStep>,
    pub temporal: Vec<ReasoningStep>,
    pub practical: Vec<ReasoningStep>,
}

/// An annotated reasoning example as stored in `cot.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CotRecord {
    pub id: String,
    pub query: String,
    #[serde(default)]
    pub poi_ids: Vec<String>,
    pub chain: CoTChain,
    pub answer: String,
    #[serde(default)]
    pub split: Option<Split>,
}

/// Constraints extracted from a request; shared by reasoning and planning.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub day: Weekday,
    pub day_window: TimeWindow,
    #[serde(default)]
    pub budget: Option<Money>,
    pub group_size: u32,
    #[serde(default)]
    pub required_access: BTreeSet<AccessFlag>,
}

impl ConstraintSet {
    /// A full 09:00-21:00 day with no budget, for one traveller.
    pub fn for_day(day: Weekday) -> Self {
        ConstraintSet {
            day,
            day_window: TimeWindow { start: 540, end: 1260 },
            budget: None,
            group_size: 1,
            required_access: BTreeSet::new(),
        }
    }
}
