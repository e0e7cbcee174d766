/** Stable colors per state label: pure hash of the string, so the same
 * label gets the same color in every session and view. */

export function labelHue(label: string): number {
  let h = 2166136261;
  for (let i = 0; i < label.length; i++) {
    h ^= label.charCodeAt(i);
    h = Math.imul(h, 16777619);
  }
  return (h >>> 0) % 360;
}

export function labelColor(label: string | number | null): string {
  if (label === null) return "transparent";
  const text = String(label);
  const hue = labelHue(text);
  return `hsl(${hue}, 62%, 58%)`;
}

export function severityColor(severity: string): string {
  switch (severity) {
    case "critical":
      return "#d03030";
    case "warn":
      return "#d08a20";
    default:
      return "#5a7a9a";
  }
}
