use std::fmt;

use intent_space::ErrorCategory;

/// Exit-code families. Usage errors from argument parsing exit with 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Config,
    Input,
    Io,
    Shape,
    Numeric,
    Eval,
}

impl Category {
    pub fn exit_code(self) -> i32 {
        match self {
            Category::Config => 3,
            Category::Input => 4,
            Category::Io => 5,
            Category::Shape => 6,
            Category::Numeric => 7,
            Category::Eval => 8,
        }
    }
}

impl From<ErrorCategory> for Category {
    fn from(c: ErrorCategory) -> Self {
        match c {
            ErrorCategory::Shape => Category::Shape,
            ErrorCategory::Numeric => Category::Numeric,
            ErrorCategory::Input => Category::Input,
            ErrorCategory::Config => Category::Config,
            ErrorCategory::Eval => Category::Eval,
            ErrorCategory::Io => Category::Io,
        }
    }
}

/// A front-end error with its category.
#[derive(Debug)]
pub struct Failure {
    pub category: Category,
    pub message: String,
}

impl Failure {
    pub fn new(category: Category, message: impl Into<String>) -> Self {
        Failure {
            category,
            message: message.into(),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}

/// Exit code for an error chain; 1 when nothing in it is categorised.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(f) = cause.downcast_ref::<Failure>() {
            return f.category.exit_code();
        }
        if let Some(e) = cause.downcast_ref::<intent_space::Error>() {
            return Category::from(e.category()).exit_code();
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return Category::Io.exit_code();
        }
    }
    1
}
