/** Export helpers. The cockpit never reformats trajectory data: the
 * download is the server's own /trace.csv, cut to the displayed time
 * window with its rows byte-identical. */

const TRACE_HEADER = "t,theta1,theta1_dot,theta2,theta2_dot,u,w,z1,z2,z3";

/** Keep the header and exactly the rows whose time stamp falls inside
 * [t0, t1]; the retained lines are not touched in any way. */
export function sliceTraceCsv(csv: string, t0: number, t1: number): string {
  const lines = csv.split("\n");
  if (lines.length === 0 || lines[0] !== TRACE_HEADER) {
    throw new Error(`unexpected trace header: ${lines[0] ?? "(empty)"}`);
  }
  const kept: string[] = [lines[0]];
  for (let i = 1; i < lines.length; i++) {
    const line = lines[i];
    if (line === undefined || line.length === 0) continue;
    const comma = line.indexOf(",");
    const t = Number.parseFloat(comma >= 0 ? line.slice(0, comma) : line);
    if (!Number.isFinite(t)) {
      throw new Error(`bad time stamp on trace row ${i + 1}`);
    }
    if (t >= t0 && t <= t1) kept.push(line);
  }
  return kept.join("\n") + "\n";
}

/** ws://host:port/ws -> http://host:port/trace.csv (wss -> https). */
export function traceUrlFromWs(wsUrl: string): string {
  const url = new URL(wsUrl);
  const scheme = url.protocol === "wss:" ? "https:" : "http:";
  return `${scheme}//${url.host}/trace.csv`;
}
