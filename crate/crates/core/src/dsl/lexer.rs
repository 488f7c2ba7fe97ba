use super::parser::ParseError;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Tok {
    Ident(String),
    Num(f64),
    Assign, // :=
    Colon,  // :
    Semi,   // ;
    Comma,  // ,
    Choice, // ++
    Plus,   // +
    Minus,  // -
    Star,   // *
    Slash,  // /
    Caret,  // ^
    LParen, // (
    RParen, // )
    LBrace, // {
    RBrace, // }
    Prime,  // '
    Quest,  // ?
    Amp,    // &
    Bar,    // |
    Bang,   // !
    Arrow,  // ->
    Eq,     // =
    Ne,     // !=
    Ge,     // >=
    Gt,     // >
    Le,     // <=
    Lt,     // <
    Eof,
}

impl Tok {
    pub(crate) fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Num(x) => format!("number `{x}`"),
            Tok::Eof => "end of input".to_string(),
            other => format!("`{}`", other.text()),
        }
    }

    pub(crate) fn text(&self) -> &'static str {
        match self {
            Tok::Assign => ":=",
            Tok::Colon => ":",
            Tok::Semi => ";",
            Tok::Comma => ",",
            Tok::Choice => "++",
            Tok::Plus => "+",
            Tok::Minus => "-",
            Tok::Star => "*",
            Tok::Slash => "/",
            Tok::Caret => "^",
            Tok::LParen => "(",
            Tok::RParen => ")",
            Tok::LBrace => "{",
            Tok::RBrace => "}",
            Tok::Prime => "'",
            Tok::Quest => "?",
            Tok::Amp => "&",
            Tok::Bar => "|",
            Tok::Bang => "!",
            Tok::Arrow => "->",
            Tok::Eq => "=",
            Tok::Ne => "!=",
            Tok::Ge => ">=",
            Tok::Gt => ">",
            Tok::Le => "<=",
            Tok::Lt => "<",
            Tok::Ident(_) => "identifier",
            Tok::Num(_) => "number",
            Tok::Eof => "end of input",
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Spanned {
    pub tok: Tok,
    pub line: usize,
    pub col: usize,
}

pub(crate) fn lex(src: &str) -> Result<Vec<Spanned>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);

    macro_rules! bump {
        () => {{
            if chars[i] == '\n' {
                line += 1;
                col = 1;
            } else {
                col += 1;
            }
            i += 1;
        }};
    }

    while i < chars.len() {
        let c = chars[i];
        let next = chars.get(i + 1).copied();
        if c.is_whitespace() {
            bump!();
            continue;
        }
        if c == '#' || (c == '/' && next == Some('/')) {
            while i < chars.len() && chars[i] != '\n' {
                bump!();
            }
            continue;
        }
        let (start_line, start_col) = (line, col);
        let tok = if c.is_ascii_alphabetic() || c == '_' {
            let mut s = String::new();
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                s.push(chars[i]);
                bump!();
            }
            if s == "forall" || s == "exists" {
                return Err(ParseError::new(
                    start_line,
                    start_col,
                    vec!["a quantifier-free formula".into()],
                    format!("quantifier `{s}`"),
                ));
            }
            out.push(Spanned {
                tok: Tok::Ident(s),
                line: start_line,
                col: start_col,
            });
            continue;
        } else if c.is_ascii_digit() || (c == '.' && next.is_some_and(|d| d.is_ascii_digit())) {
            let mut s = String::new();
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                s.push(chars[i]);
                bump!();
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let save = (i, line, col, s.len());
                s.push(chars[i]);
                bump!();
                if i < chars.len() && (chars[i] == '+' || chars[i] == '-') {
                    s.push(chars[i]);
                    bump!();
                }
                if i < chars.len() && chars[i].is_ascii_digit() {
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        s.push(chars[i]);
                        bump!();
                    }
                } else {
                    // not an exponent after all; `2e` is a number followed by identifier `e`
                    i = save.0;
                    line = save.1;
                    col = save.2;
                    s.truncate(save.3);
                }
            }
            let value: f64 = s
                .parse()
                .map_err(|_| ParseError::new(start_line, start_col, vec!["a number".into()], format!("`{s}`")))?;
            out.push(Spanned {
                tok: Tok::Num(value),
                line: start_line,
                col: start_col,
            });
            continue;
        } else {
            let two = |a: char, b: char| c == a && next == Some(b);
            let (tok, width) = if two(':', '=') {
                (Tok::Assign, 2)
            } else if two('+', '+') {
                (Tok::Choice, 2)
            } else if two('-', '>') {
                (Tok::Arrow, 2)
            } else if two('!', '=') {
                (Tok::Ne, 2)
            } else if two('>', '=') {
                (Tok::Ge, 2)
            } else if two('<', '=') {
                (Tok::Le, 2)
            } else {
                let t = match c {
                    ':' => Tok::Colon,
                    ';' => Tok::Semi,
                    ',' => Tok::Comma,
                    '+' => Tok::Plus,
                    '-' => Tok::Minus,
                    '*' => Tok::Star,
                    '/' => Tok::Slash,
                    '^' => Tok::Caret,
                    '(' => Tok::LParen,
                    ')' => Tok::RParen,
                    '{' => Tok::LBrace,
                    '}' => Tok::RBrace,
                    '\'' => Tok::Prime,
                    '?' => Tok::Quest,
                    '&' => Tok::Amp,
                    '|' => Tok::Bar,
                    '!' => Tok::Bang,
                    '=' => Tok::Eq,
                    '>' => Tok::Gt,
                    '<' => Tok::Lt,
                    '[' | ']' | '\\' => {
                        return Err(ParseError::new(
                            line,
                            col,
                            vec!["a quantifier- and modality-free formula".into()],
                            format!("`{c}`"),
                        ))
                    }
                    other => {
                        return Err(ParseError::new(
                            line,
                            col,
                            vec!["a token".into()],
                            format!("unexpected character `{other}`"),
                        ))
                    }
                };
                (t, 1)
            };
            for _ in 0..width {
                bump!();
            }
            tok
        };
        out.push(Spanned {
            tok,
            line: start_line,
            col: start_col,
        });
    }
    out.push(Spanned {
        tok: Tok::Eof,
        line,
        col,
    });
    Ok(out)
}
