use std::fmt;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Tok {
    /// lower-case identifier, may end in `?` or `!`
    Ident(String),
    /// Capitalized identifier
    Upper(String),
    Int(i64),
    Str(String),
    Atom(String),
    Dot,
    Comma,
    Colon,
    LParen,
    RParen,
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Arrow,  // ~>
    LArrow, // <-
    At,
    Caret,
    Assign, // =
    Plus,
    Minus,
    Star,
    Slash,
    Lt,
    Le,
    Gt,
    Ge,
    EqEq,
    Ne,
    Concat, // <>
    Semi,
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Tok::Ident(s) | Tok::Upper(s) => return f.write_str(s),
            Tok::Int(i) => return write!(f, "{i}"),
            Tok::Str(s) => return write!(f, "{s:?}"),
            Tok::Atom(a) => return write!(f, ":{a}"),
            Tok::Dot => ".",
            Tok::Comma => ",",
            Tok::Colon => ":",
            Tok::LParen => "(",
            Tok::RParen => ")",
            Tok::LBrace => "{",
            Tok::RBrace => "}",
            Tok::LBracket => "[",
            Tok::RBracket => "]",
            Tok::Arrow => "~>",
            Tok::LArrow => "<-",
            Tok::At => "@",
            Tok::Caret => "^",
            Tok::Assign => "=",
            Tok::Plus => "+",
            Tok::Minus => "-",
            Tok::Star => "*",
            Tok::Slash => "/",
            Tok::Lt => "<",
            Tok::Le => "<=",
            Tok::Gt => ">",
            Tok::Ge => ">=",
            Tok::EqEq => "==",
            Tok::Ne => "!=",
            Tok::Concat => "<>",
            Tok::Semi => ";",
            Tok::Eof => "end of input",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug)]
pub struct Token {
    pub tok: Tok,
    pub line: u32,
    pub column: u32,
    /// Length in characters.
    pub len: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexError {
    pub line: u32,
    pub column: u32,
    pub message: String,
}

pub fn tokenize(src: &str) -> Result<Vec<Token>, LexError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    let mut line = 1u32;
    let mut col = 1u32;

    let err = |line, column, message: String| LexError { line, column, message };

    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        let (tline, tcol) = (line, col);
        let two = |a: char, b: char| c == a && chars.get(i + 1) == Some(&b);

        let tok = if c.is_ascii_digit() {
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '_') {
                i += 1;
            }
            let text: String = chars[start..i].iter().filter(|&&c| c != '_').collect();
            let n =
                text.parse::<i64>().map_err(|_| err(tline, tcol, format!("integer literal out of range: {text}")))?;
            Tok::Int(n)
        } else if c.is_alphabetic() || c == '_' {
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == '?' || chars[i] == '!') {
                i += 1;
            }
            let text: String = chars[start..i].iter().collect();
            if c.is_uppercase() {
                Tok::Upper(text)
            } else {
                Tok::Ident(text)
            }
        } else if c == '"' {
            i += 1;
            let mut s = String::new();
            loop {
                match chars.get(i) {
                    None | Some('\n') => return Err(err(tline, tcol, "unterminated string literal".into())),
                    Some('"') => {
                        i += 1;
                        break;
                    }
                    Some('\\') => {
                        let esc = chars.get(i + 1).copied();
                        s.push(match esc {
                            Some('n') => '\n',
                            Some('t') => '\t',
                            Some('\\') => '\\',
                            Some('"') => '"',
                            Some('#') => '#',
                            other => {
                                return Err(err(
                                    line,
                                    col + (i - start) as u32,
                                    format!("unknown escape \\{}", other.unwrap_or(' ')),
                                ))
                            }
                        });
                        i += 2;
                    }
                    Some(&ch) => {
                        s.push(ch);
                        i += 1;
                    }
                }
            }
            Tok::Str(s)
        } else if c == ':' && chars.get(i + 1).is_some_and(|n| n.is_alphabetic() || *n == '_') {
            i += 1;
            let s = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == '?' || chars[i] == '!') {
                i += 1;
            }
            Tok::Atom(chars[s..i].iter().collect())
        } else if two('~', '>') {
            i += 2;
            Tok::Arrow
        } else if two('<', '-') {
            i += 2;
            Tok::LArrow
        } else if two('<', '>') {
            i += 2;
            Tok::Concat
        } else if two('<', '=') {
            i += 2;
            Tok::Le
        } else if two('>', '=') {
            i += 2;
            Tok::Ge
        } else if two('=', '=') {
            i += 2;
            Tok::EqEq
        } else if two('!', '=') {
            i += 2;
            Tok::Ne
        } else {
            i += 1;
            match c {
                '.' => Tok::Dot,
                ',' => Tok::Comma,
                ':' => Tok::Colon,
                '(' => Tok::LParen,
                ')' => Tok::RParen,
                '{' => Tok::LBrace,
                '}' => Tok::RBrace,
                '[' => Tok::LBracket,
                ']' => Tok::RBracket,
                '@' => Tok::At,
                '^' => Tok::Caret,
                '=' => Tok::Assign,
                '+' => Tok::Plus,
                '-' => Tok::Minus,
                '*' => Tok::Star,
                '/' => Tok::Slash,
                '<' => Tok::Lt,
                '>' => Tok::Gt,
                ';' => Tok::Semi,
                other => return Err(err(tline, tcol, format!("unexpected character {other:?}"))),
            }
        };
        let len = (i - start) as u32;
        col += len;
        out.push(Token { tok, line: tline, column: tcol, len });
    }
    out.push(Token { tok: Tok::Eof, line, column: col, len: 0 });
    Ok(out)
}
