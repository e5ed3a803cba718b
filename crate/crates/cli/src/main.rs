use std::process::ExitCode;

fn main() -> ExitCode {
    trapline::init_logging();
    let result = trapline::dispatch(std::env::args_os());
    if result.exit_code == 0 {
        print!("{}", result.summary);
    } else {
        eprint!("{}", result.summary);
    }
    ExitCode::from(result.exit_code)
}
